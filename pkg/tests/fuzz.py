"""Adversarial critic replies: malformed, contradictory, empty and hostile."""

import json
import random

SHAPES = [
    lambda r: "",
    lambda r: " " * r.randint(1, 5),
    lambda r: "no json at all " + str(r.random()),
    lambda r: "{",
    lambda r: "}{",
    lambda r: "```json\n{not valid}\n```",
    lambda r: "```json\n[1, 2, 3]\n```",
    lambda r: json.dumps({"error": True}),
    lambda r: json.dumps({"error": True, "suggestion": ""}),
    lambda r: json.dumps({"error": True, "suggestion": "   \n\t"}),
    lambda r: json.dumps({"error": True, "suggestion": None}),
    lambda r: json.dumps({"error": True, "suggestion": ["a", "list"]}),
    lambda r: json.dumps({"error": False, "suggestion": "should be dropped"}),
    lambda r: json.dumps({"error": "maybe", "suggestion": "x"}),
    lambda r: json.dumps({"error": 2, "suggestion": "x"}),
    lambda r: json.dumps({"error": None}),
    lambda r: json.dumps({"suggestion": "missing error key"}),
    lambda r: json.dumps({"error": "yes", "suggestion": "check again"}),
    lambda r: json.dumps({"error": 0, "suggestion": "contradiction"}),
    lambda r: json.dumps({"error": 1, "suggestion": r.choice(["", "fix", " x "])}),
    lambda r: "prefix " + json.dumps({"error": r.choice([True, False]), "suggestion": "s"}) + " suffix {",
    lambda r: "```json\n" + json.dumps({"error": True, "suggestion": "a"}) + "\n```\n```json\n{}\n```",
    lambda r: json.dumps({"error": True, "suggestion": "\u0000​"}),
    lambda r: "{\"error\": true, \"suggestion\": \"unterminated",
    lambda r: "".join(chr(r.randint(0, 0x2FFF)) for _ in range(r.randint(0, 40))),
    lambda r: json.dumps({"error": float("nan"), "suggestion": "x"}),
    lambda r: json.dumps({"error": r.random() < 0.5, "suggestion": "x" * r.randint(0, 3),
                          "rationale": r.choice([None, 5, "", "why"])}),
]


def adversarial_replies(n: int, seed: int = 0) -> list[str]:
    rng = random.Random(seed)
    return [rng.choice(SHAPES)(rng) for _ in range(n)]
