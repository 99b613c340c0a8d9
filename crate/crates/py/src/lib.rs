use pyo3::prelude::*;

#[pymodule]
fn peertrade_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
