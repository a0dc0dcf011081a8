//! Regenerates fixtures/spig_fixture.jsonl from the fixture manifest.
use stereo_core::store::{synthesize, StoreManifest, FIXTURE_COUNTS};

fn main() {
    let store = synthesize(&StoreManifest::from_counts(&FIXTURE_COUNTS)).expect("fixture manifest is valid");
    print!("{}", stereo_audit::persist::store_to_string(&store));
}
