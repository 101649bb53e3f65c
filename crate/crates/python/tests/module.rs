use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(gazesep_py::gazesep_module)(py);
        let globals = PyDict::new(py);
        globals.set_item("gazesep", m).unwrap();
        f(py, &globals)
    })
}

fn eval_f64(py: Python<'_>, globals: &Bound<'_, PyDict>, expr: &str) -> f64 {
    let code = std::ffi::CString::new(expr).unwrap();
    py.eval(&code, Some(globals), None).unwrap().extract().unwrap()
}

#[test]
fn functions_agree_with_the_library() {
    with_module(|py, g| {
        let err = eval_f64(py, g, "gazesep.angular_error_deg([1, 0, 0], [0, 0, -1])");
        assert!((err - 90.0).abs() < 1e-12);
        let d = eval_f64(py, g, "gazesep.distill_loss([1.0, 2.0], [2.0, -1.0])");
        assert_eq!(d, gazesep::losses::distill_loss(&[1.0, 2.0], &[2.0, -1.0]).unwrap());
        let n = eval_f64(py, g, "len(gazesep.FactorSet.default())");
        assert_eq!(n as usize, gazesep::FactorSet::default_set().len());
    });
}

#[test]
fn library_errors_become_value_errors() {
    with_module(|py, g| {
        let code = c"gazesep.cosine_similarity([0.0, 0.0], [1.0, 0.0])";
        let e = py.eval(code, Some(g), None).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let code = c"gazesep.rank_variant_loss('hinge', [[1.0], [2.0]], [[0, 0, -1], [1, 0, 0]])";
        let e = py.eval(code, Some(g), None).unwrap_err();
        assert!(e.to_string().contains("hinge"));
    });
}
