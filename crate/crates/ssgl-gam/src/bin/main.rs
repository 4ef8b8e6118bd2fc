fn main() {
    std::process::exit(ssgl_gam::cli::run(std::env::args_os()));
}
