/// Drops comments, collapses whitespace runs to one space, and trims.
pub fn normalize_spec(text: &str) -> String {
    let mut code = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let next = [rest.find("//"), rest.find("--"), rest.find("/*")].into_iter().flatten().min();
        match next {
            None => {
                code.push_str(rest);
                break;
            }
            Some(i) => {
                code.push_str(&rest[..i]);
                code.push(' ');
                let after = &rest[i..];
                rest = if after.starts_with("/*") {
                    after.find("*/").map_or("", |e| &after[e + 2..])
                } else {
                    after.find('\n').map_or("", |e| &after[e..])
                };
            }
        }
    }
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `proposed` is the faulty specification up to comments and layout.
pub fn is_repetition(proposed: &str, faulty: &str) -> bool {
    normalize_spec(proposed) == normalize_spec(faulty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_texts() {
        assert!(is_repetition("sig A {}\n", "sig A {}\n"));
    }

    #[test]
    fn indentation_and_comments_ignored() {
        let a = "sig A {\n  f: set A\n}\nfact { some A }\n";
        let b = "sig A {\n\tf: set A // the field\n}\n-- a fact\nfact {   some A }";
        assert!(is_repetition(a, b));
        assert!(is_repetition(a, "/* header */ sig A { f: set A } fact { some A }"));
    }

    #[test]
    fn operator_change_detected() {
        assert!(!is_repetition("fact { x' = x - y }", "fact { x' = x + y }"));
    }

    fn arb_spec() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-zA-Z{}.+=&|'\\[\\] ]{0,24}", 0..12)
    }

    proptest! {
        #[test]
        fn reflexive_and_symmetric(a in arb_spec(), b in arb_spec()) {
            let (a, b) = (a.join("\n"), b.join("\n"));
            prop_assert!(is_repetition(&a, &a));
            prop_assert_eq!(is_repetition(&a, &b), is_repetition(&b, &a));
        }

        #[test]
        fn invariant_under_comments_and_reindent(lines in arb_spec(), indent in "[ \t]{0,4}", comment in "[a-z ]{0,12}") {
            let original = lines.join("\n");
            let edited: String = lines
                .iter()
                .map(|l| format!("{indent}{l} // {comment}\n-- {comment}\n"))
                .collect();
            prop_assert!(is_repetition(&edited, &original));
        }
    }
}
