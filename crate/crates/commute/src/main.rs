fn main() {
    if let Err(e) = commute::cli::run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
