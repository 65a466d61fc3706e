fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAIRHC_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(fairhc::cli::run(&argv));
}
