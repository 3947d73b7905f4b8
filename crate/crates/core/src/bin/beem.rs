use clap::Parser;

fn main() {
    env_logger::init();
    let cli = beem::cli::Cli::parse();
    match beem::cli::run(&cli) {
        Ok(out) => print!("{out}"),
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
