use std::collections::BTreeMap;

use proptest::prelude::*;
use restlog_core::ingest::{
    parse_json_line, parse_nginx_line, render_json_line, render_nginx_line, FieldMap, RawRequestRecord,
};
use restlog_core::spec_model::Method;

fn record() -> impl Strategy<Value = RawRequestRecord> {
    (
        // whole seconds: the combined format has no sub-second field
        1_500_000_000i64..2_000_000_000,
        prop::sample::select(Method::ALL.to_vec()),
        "(/[a-z0-9_]{1,8}){1,4}(\\?[a-z]{1,5}=[a-z0-9]{1,5})?",
        100u16..600,
        prop::option::of("[a-z]{1,8}"),
        prop::collection::btree_map("[a-z_]{1,6}", "[a-zA-Z0-9 ]{0,8}", 0..4),
    )
        .prop_map(|(secs, method, uri, status, user, params)| RawRequestRecord {
            timestamp: secs * 1000,
            method,
            uri,
            status,
            body_params: params
                .into_iter()
                .map(|(k, v)| (k, serde_json::Value::String(v)))
                .collect::<BTreeMap<_, _>>(),
            user_hint: user,
            source_line: 7,
        })
}

proptest! {
    #[test]
    fn nginx_round_trip(r in record()) {
        let line = render_nginx_line(&r, "10.0.0.1", 42);
        let back = parse_nginx_line(&line, 7).unwrap();
        let expected = RawRequestRecord { body_params: BTreeMap::new(), ..r };
        prop_assert_eq!(back, expected);
    }

    #[test]
    fn json_round_trip(r in record(), ms in 0i64..1000) {
        let r = RawRequestRecord { timestamp: r.timestamp + ms, ..r };
        let fields = FieldMap::default();
        let line = render_json_line(&r, &fields);
        prop_assert_eq!(parse_json_line(&line, 7, &fields).unwrap(), r);
    }

    #[test]
    fn garbage_never_panics(s in "\\PC{0,120}") {
        let _ = parse_nginx_line(&s, 1);
        let _ = parse_json_line(&s, 1, &FieldMap::default());
    }
}
