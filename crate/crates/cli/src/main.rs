use clap::Parser;

fn main() {
    let cli = stoploss_cli::Cli::parse();
    std::process::exit(stoploss_cli::run(cli));
}
