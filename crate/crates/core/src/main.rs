fn main() {
    std::process::exit(glyphnet::cli::run(std::env::args_os()));
}
