fn main() {
    std::process::exit(otsieve::cli::run(std::env::args_os()));
}
