fn main() {
    std::process::exit(foilbox::cli::run(std::env::args_os()));
}
