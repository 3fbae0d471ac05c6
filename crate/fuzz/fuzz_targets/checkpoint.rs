#![no_main]

use cycledm::checkpoint::Container;
use cycledm::conversion::ConversionPair;
use cycledm::diffusion::Ddpm;
use cycledm::evaluation::FeatureExtractor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let bytes = c.to_bytes();
        assert_eq!(Container::from_bytes(&bytes).expect("written container parses").to_bytes(), bytes);
        let _ = Ddpm::from_container(c.clone());
        let _ = ConversionPair::from_container(c.clone());
        let _ = FeatureExtractor::from_container(c);
    }
});
