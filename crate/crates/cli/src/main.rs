use std::sync::atomic::{AtomicBool, Ordering};

use clap::Parser;
use eqlift_cli::{init_threads, run, Cli, CliError};

static CANCEL: AtomicBool = AtomicBool::new(false);

fn main() {
    let cli = Cli::parse();
    let result = init_threads()
        .and_then(|()| {
            ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst))
                .map_err(|e| CliError::Io(format!("cannot install Ctrl-C handler: {e}")))
        })
        .and_then(|()| run(cli, &CANCEL));
    if let Err(e) = result {
        eprintln!("eqlf: {e}");
        std::process::exit(e.exit_code());
    }
}
