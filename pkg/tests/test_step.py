from pathlib import Path

import numpy as np
import pytest

from nurbsrep.nurbs import curve_eval, NurbsCurve, surface_eval_many
from nurbsrep.step import (
    DanglingReferenceError,
    InvalidSurfaceError,
    KnotMultiplicityError,
    StepSyntaxError,
    expand_knots,
    extract_step_surfaces,
    parse_data_section,
)

FIXTURES = Path(__file__).parent / "fixtures"


def doc(body: str) -> str:
    return f"ISO-10303-21;\nHEADER;\nENDSEC;\nDATA;\n{body}\nENDSEC;\nEND-ISO-10303-21;\n"


POINTS = "\n".join(f"#{i + 1}=CARTESIAN_POINT('',({i // 2}.,{i % 2}.,0.));" for i in range(4))


def bilinear(mults="(2,2),(2,2)", pts="((#1,#2),(#3,#4))", deg="1,1"):
    return (f"#9=B_SPLINE_SURFACE_WITH_KNOTS('',{deg},{pts},.UNSPECIFIED.,.F.,.F.,.F.,"
            f"{mults},(0.,1.),(0.,1.),.UNSPECIFIED.);")


def test_bicubic_fixture():
    rep = extract_step_surfaces((FIXTURES / "bicubic.stp").read_text())
    assert rep.entity_ids == [20, 24]
    s = rep.surfaces[0]
    assert s.degrees == (3, 3) and s.dims == (4, 4)
    # hand-expanded from values (0, 2.5) x mults (4, 4) and (-1, 1) x (4, 4)
    assert s.knots_u.tolist() == [0.0, 0.0, 0.0, 0.0, 2.5, 2.5, 2.5, 2.5]
    assert s.knots_v.tolist() == [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]
    assert np.all(s.weights == 1.0)
    assert s.control_points[1, 2].tolist() == [1.0, 2.0, 1.5]
    assert s.control_points[3, 3].tolist() == [3.0, 3.0, -0.25]
    t = rep.surfaces[1]
    assert t.knots_u.tolist() == [0.0, 0.0, 0.0, 0.0, 0.4, 1.0, 1.0, 1.0, 1.0]
    assert t.dims == (5, 4)
    assert rep.skipped == {"PLANE": 1, "CYLINDRICAL_SURFACE": 1}
    assert "skipped.PLANE=1" in rep.summary()


def test_rational_complex_fixture():
    rep = extract_step_surfaces((FIXTURES / "rational.stp").read_text())
    assert rep.entity_ids == [10, 11]
    s = rep.surfaces[0]
    assert s.degrees == (2, 1)
    assert s.weights[:, 0].tolist() == [1.0, 0.707106781186548, 1.0]
    us = np.linspace(0, s.knots_u[-1], 25)
    pts = surface_eval_many(s, us, np.full(25, 1.0))
    np.testing.assert_allclose(np.hypot(pts[:, 0], pts[:, 1]), 1.0, atol=1e-12)
    assert np.all(rep.surfaces[1].weights == 1.0)
    assert rep.skipped["RECTANGULAR_TRIMMED_SURFACE"] == 1


def test_parse_values():
    ents = parse_data_section(doc("#1=FOO('a''b',$,*,.T.,(1,-2.5E1,.5),#7,BAR(3.));"))
    args = ents[1].args
    assert args[0] == "a'b" and args[1] is None and args[2] == "*"
    assert args[3].name == "T"
    assert args[4] == [1, -25.0, 0.5]
    assert args[5].id == 7
    assert args[6].name == "BAR" and args[6].args == (3.0,)


def test_expand_knots():
    assert expand_knots([0.0, 0.5, 1.0], [3, 1, 3]).tolist() == [0, 0, 0, 0.5, 1, 1, 1]
    with pytest.raises(KnotMultiplicityError):
        expand_knots([0.0, 1.0], [2])
    with pytest.raises(KnotMultiplicityError):
        expand_knots([0.0, 1.0], [2, 0])


def test_truncated_entity_names_id():
    text = doc(POINTS + "\n#9=B_SPLINE_SURFACE_WITH_KNOTS('',1,1,((#1,#2),(#3,#4))")
    with pytest.raises(StepSyntaxError, match="#9") as exc:
        extract_step_surfaces(text)
    assert exc.value.entity == 9


def test_malformed_syntax_reports_position():
    text = doc("#1=CARTESIAN_POINT('',(0.,0.,0.),,);")
    with pytest.raises(StepSyntaxError) as exc:
        extract_step_surfaces(text)
    assert exc.value.entity == 1 and exc.value.offset is not None
    assert text[exc.value.offset] == ","


def test_missing_data_section():
    with pytest.raises(StepSyntaxError):
        extract_step_surfaces("ISO-10303-21;\nHEADER;\nENDSEC;\n")
    with pytest.raises(StepSyntaxError, match="ENDSEC"):
        extract_step_surfaces("ISO-10303-21;\nDATA;\n" + POINTS)


def test_dangling_reference():
    with pytest.raises(DanglingReferenceError, match="#5"):
        extract_step_surfaces(doc(POINTS + "\n" + bilinear(pts="((#1,#2),(#3,#5))")))


def test_multiplicity_mismatch():
    with pytest.raises(KnotMultiplicityError, match="expands to 5"):
        extract_step_surfaces(doc(POINTS + "\n" + bilinear(mults="(3,2),(2,2)")))


def test_invalid_surface_not_emitted():
    # degree 2 needs 3 points per row
    text = doc(POINTS + "\n" + bilinear(deg="2,1", mults="(3,3),(2,2)"))
    with pytest.raises((InvalidSurfaceError, KnotMultiplicityError)):
        extract_step_surfaces(text)
    bad_point = doc("#1=CARTESIAN_POINT('',(0.,0.));\n#2=CARTESIAN_POINT('',(0.,1.,0.));\n"
                    "#3=CARTESIAN_POINT('',(1.,0.,0.));\n#4=CARTESIAN_POINT('',(1.,1.,0.));\n" + bilinear())
    with pytest.raises(InvalidSurfaceError):
        extract_step_surfaces(bad_point)


def test_duplicate_id():
    with pytest.raises(StepSyntaxError, match="duplicate"):
        extract_step_surfaces(doc("#1=FOO();\n#1=BAR();"))


def test_valid_bilinear_inline():
    rep = extract_step_surfaces(doc(POINTS + "\n" + bilinear()))
    s = rep.surfaces[0]
    assert s.degrees == (1, 1)
    np.testing.assert_allclose(surface_eval_many(s, [0.5], [0.5])[0], [0.5, 0.5, 0.0])
