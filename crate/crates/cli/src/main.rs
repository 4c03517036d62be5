use clap::Parser;
use posedit_cli::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(dir) => println!("wrote {}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
