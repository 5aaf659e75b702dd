use clap::Parser;
use fluorosense_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            eprintln!(
                "wrote {} files ({:.2} s)",
                manifest.outputs.len() + 1,
                manifest.wall_clock_seconds
            );
        }
        Err(e) => {
            eprintln!("fluorosense: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
