use siamtrack::backbone::Level;
use siamtrack::checkpoint::{decode, encode, load, read_header, save, section};
use siamtrack::model::{ModelConfig, SiamModel};

#[test]
fn file_roundtrip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/m.ckpt");
    let m = SiamModel::build(&ModelConfig::desk().with_levels(&[Level::Conv4, Level::Conv5]), 3).unwrap();
    save(&m, &path, serde_json::json!({"note": "x"})).unwrap();
    let (back, header) = load(&path).unwrap();
    assert_eq!(header.model, m.cfg);
    assert_eq!(back.trainable_params(), m.trainable_params());
    for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
        assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
    }
}

#[test]
fn header_lists_every_array_once() {
    let m = SiamModel::build(&ModelConfig::desk(), 1).unwrap();
    let bytes = encode(&m, serde_json::Value::Null).unwrap();
    let (h, payload) = read_header(&bytes).unwrap();
    let n: usize = h.arrays.iter().map(|r| r.shape.iter().product::<usize>()).sum();
    assert_eq!(payload.len(), 8 * n);
    assert!(!section(&h, "backbone").is_empty());
}

#[test]
fn config_mismatch_rejected() {
    let m = SiamModel::build(&ModelConfig::desk(), 1).unwrap();
    let bytes = encode(&m, serde_json::Value::Null).unwrap();
    let (mut h, payload) = read_header(&bytes).unwrap();
    h.model = ModelConfig::desk_padfree();
    let json = serde_json::to_vec(&h).unwrap();
    let mut forged = bytes[..12].to_vec();
    forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
    forged.extend_from_slice(&json);
    forged.extend_from_slice(payload);
    assert!(decode(&forged).is_err());
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(decode(&bad).is_err());
}
