use clap::Parser;

fn main() {
    let cli = pinode::app::Cli::parse();
    if let Err(e) = pinode::app::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
