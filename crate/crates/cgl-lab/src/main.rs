fn main() {
    std::process::exit(cgl_lab::cli::run(std::env::args_os()));
}
