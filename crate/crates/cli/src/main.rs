use clap::Parser;
use rssloc_cli::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("rssloc: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
