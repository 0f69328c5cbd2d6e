"""Verification script: output-unit activation coverage over the dataset.

A unit counts as activated when its pre-activation is strictly positive
for at least one dataset input. The verdict passes when the activated
fraction reaches the ``coverage_threshold`` param (default 1.0: every
unit must fire at least once).
"""


def verify(model, dataset, ctx):
    threshold = float(ctx.params.get("coverage_threshold", 1.0))
    activated = [False, False]
    for x in dataset:
        outputs = model(x)
        for unit, value in enumerate(outputs):
            if value > 0.0:
                activated[unit] = True
    coverage = sum(activated) / float(len(activated))
    verdict = "pass" if coverage >= threshold else "fail"
    messages = []
    if not all(activated):
        idle = [str(unit) for unit, hit in enumerate(activated) if not hit]
        messages.append("units never activated: " + ", ".join(idle))
    return {
        "verdict": verdict,
        "metrics": {"coverage": coverage},
        "messages": messages,
    }
