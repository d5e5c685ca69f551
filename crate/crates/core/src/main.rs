fn main() {
    std::process::exit(cordel::cli::run(std::env::args_os()));
}
