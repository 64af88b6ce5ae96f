use pyo3::prelude::*;

#[test]
fn spec_text_is_checked_key_by_key() {
    let spec = tgmz_py::synthetic_spec("classes = 10\nunseen = 2\n").unwrap();
    assert_eq!((spec.classes, spec.unseen, spec.per_class), (10, 2, 50));
    let err = tgmz_py::synthetic_spec("clases = 10\n").unwrap_err();
    assert!(matches!(err, tgmz::Error::Config { .. }), "{err}");
}

#[test]
fn module_exposes_the_workflow() {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "tgmz_py").unwrap();
        tgmz_py::register(&m).unwrap();
        for name in [
            "generate_dataset",
            "resolve_config",
            "config_hash",
            "train",
            "evaluate",
            "check",
            "harmonic_mean",
        ] {
            assert!(m.hasattr(name).unwrap(), "{name}");
        }
        let h: f64 = m
            .getattr("harmonic_mean")
            .unwrap()
            .call1((0.641, 0.773))
            .unwrap()
            .extract()
            .unwrap();
        assert!((h - 0.70084).abs() < 1e-4);
    });
}
