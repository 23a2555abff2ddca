fn main() {
    std::process::exit(magnon_gk::cli::run(std::env::args_os()));
}
