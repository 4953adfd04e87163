fn main() {
    if let Err(err) = coldplasma::harness::cli::run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
