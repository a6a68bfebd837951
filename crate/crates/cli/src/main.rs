use clap::Parser;

fn main() {
    let cli = asmpose_cli::Cli::parse();
    match asmpose_cli::execute(&cli) {
        Ok(summary) => print!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
