//! A corpus of invalid bearer tokens, each labelled with the rejection
//! category its construction forces.

use crate::hmac::{b64url, sign_token};

pub const HEADER: &str = r#"{"alg":"HS256","typ":"token"}"#;

pub fn payload(sub: &str, scope: &str, exp: i64) -> String {
    format!(r#"{{"sub":"{sub}","scope":"{scope}","exp":{exp}}}"#)
}

pub fn valid_token(key: &[u8], now: i64) -> String {
    sign_token(key, HEADER, &payload("clinic-1", "infer", now + 3600))
}

const B64: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

/// 25 tokens per category: malformed, bad_signature, expired, forbidden.
pub fn mutated_tokens(key: &[u8], now: i64) -> Vec<(String, &'static str)> {
    let mut out = Vec::with_capacity(100);
    let good = valid_token(key, now);
    let segs: Vec<&str> = good.split('.').collect();

    let mut malformed = vec![
        String::new(),
        ".".into(),
        "..".into(),
        segs[0].to_string(),
        format!("{}.{}", segs[0], segs[1]),
        format!("{}.{}.", segs[0], segs[1]),
        format!("{good}.{}", segs[2]),
        format!("{good}."),
        format!("!{}.{}.{}", segs[0], segs[1], segs[2]),
        format!("{}.{}*.{}", segs[0], segs[1], segs[2]),
        format!("{}.{}.{}=", segs[0], segs[1], segs[2]),
        // valid base64, not JSON
        sign_token(key, "not json", &payload("a", "infer", now + 60)),
        sign_token(key, HEADER, "[1,2,3]"),
        sign_token(key, HEADER, r#"{"sub":"a","scope":"infer"}"#),
        sign_token(key, r#"{"alg":"none","typ":"token"}"#, &payload("a", "infer", now + 60)),
        sign_token(key, r#"{"alg":"HS256","typ":"JWT"}"#, &payload("a", "infer", now + 60)),
    ];
    for cut in 1..=9 {
        // truncated segment: removing trailing characters of the header
        let h = &segs[0][..segs[0].len() - cut * 3];
        malformed.push(format!("{h}.{}.{}", segs[1], segs[2]));
    }
    out.extend(malformed.into_iter().map(|t| (t, "malformed")));

    for i in 0..15 {
        // single-character substitutions inside the signature, away from the
        // final character whose low bits are padding
        let sig = segs[2].as_bytes();
        let pos = (i * 7) % (sig.len() - 1);
        let mut flipped = sig.to_vec();
        let idx = B64.iter().position(|&c| c == sig[pos]).unwrap();
        flipped[pos] = B64[(idx + 1 + i) % 64];
        out.push((
            format!("{}.{}.{}", segs[0], segs[1], String::from_utf8(flipped).unwrap()),
            "bad_signature",
        ));
    }
    for i in 0..5 {
        // payload swapped for another well-formed one
        let other = b64url(payload(&format!("clinic-{}", i + 2), "infer", now + 3600).as_bytes());
        out.push((format!("{}.{other}.{}", segs[0], segs[2]), "bad_signature"));
    }
    for i in 0..5 {
        let wrong_key = format!("not-the-key-{i}");
        out.push((
            sign_token(wrong_key.as_bytes(), HEADER, &payload("clinic-1", "infer", now + 3600)),
            "bad_signature",
        ));
    }

    for i in 0..25 {
        let exp = now - (i * i) as i64;
        out.push((sign_token(key, HEADER, &payload("clinic-1", "infer", exp)), "expired"));
    }

    let scopes = ["", "read", "inference", "admin", "INFER", "infer-only", "read,infer", "xinfer"];
    for i in 0..25 {
        let scope = scopes[i % scopes.len()];
        let sub = format!("clinic-{i}");
        out.push((sign_token(key, HEADER, &payload(&sub, scope, now + 60)), "forbidden"));
    }
    out
}
