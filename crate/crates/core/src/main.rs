fn main() {
    std::process::exit(sformer::cli::run(std::env::args_os()));
}
