fn main() {
    std::process::exit(gsnop::cli::run(std::env::args_os()));
}
