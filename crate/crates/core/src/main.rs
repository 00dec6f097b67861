fn main() {
    std::process::exit(simattack::cli::run(std::env::args_os()));
}
