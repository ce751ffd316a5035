use proptest::prelude::*;
use umind::token_space::{
    is_viable_prefix, parse_response_with, serialize_response_with, ResponseStructure, SectionOrder, VocabLayout,
};

fn layout() -> VocabLayout {
    VocabLayout::build(40, 20, 8, 3).unwrap()
}

fn structure() -> impl Strategy<Value = ResponseStructure> {
    let l = layout();
    let (t, s) = (l.text_range(), l.speech_range());
    let m: Vec<_> = (0..3).map(|k| l.motion_range(k)).collect();
    (
        prop::collection::vec(t.clone(), 0..10),
        prop::collection::vec(t, 0..10),
        prop::collection::vec(s, 0..10),
        prop::collection::vec((m[0].clone(), m[1].clone(), m[2].clone()), 0..5),
    )
        .prop_map(|(think, text, speech, motion)| ResponseStructure {
            think,
            text,
            speech,
            motion: motion.into_iter().flat_map(|(a, b, c)| [a, b, c]).collect(),
        })
}

fn order() -> impl Strategy<Value = SectionOrder> {
    prop_oneof![Just(SectionOrder::TextFirst), Just(SectionOrder::TextLast)]
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(s in structure(), o in order()) {
        let l = layout();
        let stream = serialize_response_with(&s, &l, o).unwrap();
        prop_assert_eq!(parse_response_with(&stream, &l, o).unwrap(), s);
    }

    #[test]
    fn every_prefix_of_a_valid_stream_is_viable(s in structure(), o in order()) {
        let l = layout();
        let stream = serialize_response_with(&s, &l, o).unwrap();
        for k in 0..=stream.len() {
            prop_assert!(is_viable_prefix(&stream[..k], &l, o));
        }
    }

    #[test]
    fn arbitrary_streams_never_panic(stream in prop::collection::vec(0u32..120, 0..40), o in order()) {
        let l = layout();
        let parsed = parse_response_with(&stream, &l, o);
        if parsed.is_ok() {
            prop_assert!(is_viable_prefix(&stream, &l, o));
        }
    }
}
