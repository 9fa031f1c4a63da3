use clap::Parser;
use polyq::commands::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = polyq::init_threads().and_then(|()| execute(cli)) {
        eprintln!("polyq: {e}");
        std::process::exit(e.exit_code());
    }
}
