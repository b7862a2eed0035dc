fn main() {
    std::process::exit(menunet::cli::run(std::env::args_os()));
}
