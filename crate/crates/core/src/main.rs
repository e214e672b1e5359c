fn main() {
    std::process::exit(inner_clt::cli::run(std::env::args_os()));
}
