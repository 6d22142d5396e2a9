use clap::Parser;

fn main() {
    let cli = ima_probe::Cli::parse();
    match ima_probe::run(&cli) {
        Ok(_) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(ima_probe::exit_code(err.kind()));
        }
    }
}
