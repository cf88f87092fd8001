fn main() {
    std::process::exit(avatarfit::cli::run(std::env::args_os()));
}
