fn main() {
    std::process::exit(hgm::cli::run(std::env::args_os()));
}
