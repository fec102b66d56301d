mod common;

use common::stage1_enum::check_stage1;

#[test]
fn stage1_matches_enumeration() {
    let positive = check_stage1(5, 150).unwrap();
    assert!(positive >= 20, "only {positive} instances build anything");
}
