fn main() {
    std::process::exit(rwtkan_cli::run(std::env::args_os()));
}
