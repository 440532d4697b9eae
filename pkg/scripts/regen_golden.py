"""Regenerate the golden prompt files under tests/fixtures/golden.

Run only after an intentional template change, then review the diff.
"""

from pathlib import Path

from dfsl.bench.runner import Pipeline, RunConfig

ROOT = Path(__file__).resolve().parents[1]
FIX = ROOT / "tests" / "fixtures"
GOLDEN = FIX / "golden"

CASES = {
    "zero_shot.txt": dict(mode="zero_shot"),
    "few_shot_static.txt": dict(mode="few_shot_static"),
    "dfsl_k5.txt": dict(mode="dfsl", strict_retrieval=True),
    "dfsl_mqp.txt": dict(mode="dfsl_mqp", strict_retrieval=True),
}


def golden_prompt(**overrides) -> str:
    config = RunConfig(
        dataset=str(FIX / "toy_test.jsonl"),
        storage=str(FIX / "toy_storage.jsonl"),
        graph=str(FIX / "toy_graph.nt"),
        **overrides,
    )
    pipeline = Pipeline.build(config)
    return pipeline.prompt_for(pipeline.dataset[0]).text


if __name__ == "__main__":
    for name, overrides in CASES.items():
        (GOLDEN / name).write_text(golden_prompt(**overrides), encoding="utf-8")
        print("wrote", GOLDEN / name)
