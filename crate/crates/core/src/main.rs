use clap::Parser;

fn main() {
    let cli = pep::cli::Cli::parse();
    match pep::cli::run(&cli, &mut |line| println!("{line}")) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
