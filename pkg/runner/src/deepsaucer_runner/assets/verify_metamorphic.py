"""Verification script: a scaling metamorphic relation as pseudo oracle.

Without a true oracle for the model's outputs, the necessary property
f(2x) = 2 f(x) is checked across the dataset. For an affine model
f(x) = Wx + b the deviation f(2x) - 2 f(x) equals -b exactly, so the
check passes precisely when the bias vanishes; tolerance covers
floating point only.
"""

TOLERANCE = 1e-9
MAX_REPORTED_VIOLATIONS = 10


def verify(model, dataset, ctx):
    max_violation = 0.0
    violations = []
    for x in dataset:
        doubled_input = model([2.0 * x[0], 2.0 * x[1]])
        doubled_output = [2.0 * value for value in model(x)]
        deviation = max(
            abs(doubled_input[0] - doubled_output[0]),
            abs(doubled_input[1] - doubled_output[1]),
        )
        if deviation > max_violation:
            max_violation = deviation
        if deviation > TOLERANCE and len(violations) < MAX_REPORTED_VIOLATIONS:
            violations.append(
                "f(2x) != 2 f(x) at x={!r}: deviation {:g}".format(x, deviation)
            )
    verdict = "pass" if max_violation <= TOLERANCE else "fail"
    return {
        "verdict": verdict,
        "metrics": {"max_violation": max_violation},
        "messages": violations,
    }
