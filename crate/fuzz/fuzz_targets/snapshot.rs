#![no_main]

use factweave::TripletStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = TripletStore::from_snapshot_bytes(data) {
        let bytes = store.to_snapshot_bytes();
        let again = TripletStore::from_snapshot_bytes(&bytes).expect("own snapshot loads");
        assert_eq!(again.to_snapshot_bytes(), bytes);
    }
});
