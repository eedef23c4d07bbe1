fn main() {
    std::process::exit(geoformer::cli::run(std::env::args_os()));
}
