use proptest::prelude::*;
use serde_json::Map;
use videomemory::agents::{build_video_prompt, BannedTerms, PromptSet, PromptTemplate};
use videomemory::backends::MockText;
use videomemory::domain::{ShotDescription, MAX_VIDEO_PROMPT_CHARS};

fn shot(plot: String) -> ShotDescription {
    ShotDescription {
        index: 1,
        scene: "market".into(),
        scene_description: String::new(),
        plot,
        characters: vec!["Mira".into()],
        key_props: vec![],
        environment_info: String::new(),
        extra: Map::new(),
    }
}

fn plot_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        // Word-like text with banned vocabulary mixed in.
        prop::collection::vec(
            prop_oneof![
                "[a-zA-Zé]{1,12}",
                Just("close-up".to_string()),
                Just("camera".to_string()),
                Just("pan".to_string()),
                Just("Mira".to_string()),
            ],
            0..2000
        )
        .prop_map(|w| w.join(" ")),
        // Arbitrary unicode up to 10^4 characters.
        prop::collection::vec(any::<char>(), 0..10_000).prop_map(|c| c.into_iter().collect()),
        // One very long word.
        (400usize..10_000).prop_map(|n| "x".repeat(n)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn video_prompt_never_exceeds_limit(plot in plot_strategy(), summary in "[ a-z]{0,900}") {
        let banned = BannedTerms::default();
        let prompts = PromptSet::default();
        let s = shot(plot);
        let without = build_video_prompt(&s, None, &prompts, &banned);
        prop_assert!(without.text.chars().count() <= MAX_VIDEO_PROMPT_CHARS);
        let llm = MockText::queue([summary]);
        let with = build_video_prompt(&s, Some(&llm), &prompts, &banned);
        prop_assert!(with.text.chars().count() <= MAX_VIDEO_PROMPT_CHARS);
        prop_assert!(llm.call_count() <= 1);
    }

    #[test]
    fn rendered_prompts_have_no_unbound_placeholders(value in "[^{}]{0,50}") {
        let t = PromptTemplate::new("t", "a {{x}} b {{y}}");
        let mut b = std::collections::BTreeMap::new();
        b.insert("x", value.clone());
        b.insert("y", value);
        let out = t.render(&b).unwrap();
        prop_assert!(!out.contains("{{"));
    }

    #[test]
    fn filtered_text_holds_no_banned_term(words in prop::collection::vec(
        prop_oneof!["[a-z]{1,8}", Just("close".to_string()), Just("up".to_string()),
                    Just("-".to_string()), Just("camera".to_string()), Just("zoom".to_string()),
                    Just("in".to_string()), Just("wide".to_string()), Just("shot".to_string())],
        0..60)) {
        let banned = BannedTerms::default();
        let out = banned.filter(&words.join(" "));
        prop_assert!(banned.filter(&out.text).removed.is_empty(), "{}", out.text);
    }
}
