use cascade_core::io::{load_operator, read_operator, save_operator, write_operator, OpFormat};
use cascade_core::mourre::conjugate_operator_harmonic;
use cascade_core::operator::shift_power;
use cascade_core::{BasisKind, BasisModel, Error, TruncatedOperator, C64};

fn sample() -> TruncatedOperator {
    let b = BasisModel::shared(BasisKind::Harmonic, 9).unwrap();
    conjugate_operator_harmonic(&b, 2, C64::new(0.3, -1.7)).unwrap()
}

#[test]
fn roundtrip_both_formats() {
    let op = sample();
    for fmt in [OpFormat::Text, OpFormat::Binary] {
        let mut buf = Vec::new();
        write_operator(&op, fmt, &mut buf).unwrap();
        let back = read_operator(buf.as_slice()).unwrap();
        assert_eq!(back.matrix, op.matrix);
        assert_eq!(back.order_tag, 1.0);
        assert!(back.hermitian);
        assert_eq!(back.basis.kind(), BasisKind::Harmonic);
    }
}

#[test]
fn format_from_extension() {
    let dir = tempfile::tempdir().unwrap();
    let b = BasisModel::shared(BasisKind::HalfWave, 5).unwrap();
    let op = TruncatedOperator::from_fn(b, -1.0, |i, j| C64::new(i as f64, j as f64));
    for name in ["a.mat", "a.txt"] {
        let p = dir.path().join(name);
        save_operator(&op, &p).unwrap();
        let back = load_operator(&p).unwrap();
        assert_eq!(back.matrix, op.matrix);
        assert!(!back.hermitian);
        assert_eq!(back.basis.kind(), BasisKind::HalfWave);
    }
    assert_eq!(OpFormat::from_path(std::path::Path::new("x.bin")), OpFormat::Binary);
    assert_eq!(OpFormat::from_path(std::path::Path::new("x.op")), OpFormat::Text);
    let text = std::fs::read_to_string(dir.path().join("a.txt")).unwrap();
    assert!(text.starts_with("#cascade-op v1\n"));
}

#[test]
fn malformed_input_rejected() {
    assert!(matches!(read_operator("hello\n".as_bytes()), Err(Error::Format(_))));
    let bad = "#cascade-op v1\nkind Harmonic\ndim 2\ndata\n1 0\n0 0\n";
    assert!(matches!(read_operator(bad.as_bytes()), Err(Error::Format(_))));
    let liar = "#cascade-op v1\nkind Harmonic\ndim 2\nhermitian 1\ndata\n0 0\n1 0\n0 0\n0 0\n";
    assert!(matches!(read_operator(liar.as_bytes()), Err(Error::NotHermitian { .. })));

    let s = shift_power(&BasisModel::shared(BasisKind::Harmonic, 4).unwrap(), 1).unwrap();
    let mut buf = Vec::new();
    write_operator(&s, OpFormat::Binary, &mut buf).unwrap();
    buf.truncate(buf.len() - 3);
    assert!(read_operator(buf.as_slice()).is_err());
}
