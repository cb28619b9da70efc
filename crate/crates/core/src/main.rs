fn main() {
    std::process::exit(sau::cli::run(std::env::args_os()));
}
