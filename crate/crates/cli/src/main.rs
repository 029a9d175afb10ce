//! `actdet` — command-line front end over the action-detection toolkit.
//!
//! Subcommands cover the dataset-to-report pipeline end to end: `stats`,
//! `filter`, and `split` prepare annotation sets; `anchors` clusters
//! ground-truth box shapes into anchor boxes; `weights` derives
//! class-balance weights from frame frequencies; `eval` scores detections
//! against ground truth; `decode` turns raw detector grids into
//! detections.
//!
//! Data goes to standard output or to the paths given by `--out`-style
//! flags; diagnostics go to standard error only, so output can always be
//! piped. Every command is a pure function of its input files, flags, and
//! seed: re-running reproduces byte-identical output and never touches the
//! inputs. Exit status is 0 on success, 1 for anything wrong with the
//! invocation or its input files, and 2 for failures past validation such
//! as unwritable outputs.

use clap::Parser;

mod commands;

fn main() {
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive as clap "errors" but are
            // successful outcomes; everything else is a usage mistake.
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {}", err.message());
            std::process::exit(err.code());
        }
    }
}
