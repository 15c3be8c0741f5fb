use std::process::ExitCode;
use std::sync::mpsc;

use clap::Parser;
use pcsi_cli::{bind_server, run, serve_banner, Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Serve(args) = &cli.command {
        return serve(args);
    }
    match run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn serve(args: &pcsi_cli::ServeArgs) -> ExitCode {
    let server = match bind_server(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let params = server.params().clone();
    let handle = match server.spawn() {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    println!("{}", serve_banner(&params, handle.addr()));

    let (tx, rx) = mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        eprintln!("error: installing interrupt handler: {e}");
        return ExitCode::from(2);
    }
    let _ = rx.recv();
    handle.shutdown();
    println!("shut down");
    ExitCode::SUCCESS
}
