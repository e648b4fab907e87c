"""Synthetic referent-tracking dialogues on an object grid.

Each episode fixes one scene and asks six queries about it. Two referents
get established by attribute ("where is the red square"); later queries
point back at them only through "it" (the most recently established) or
"that-one" (the earlier one) and never repeat the attributes, so those
turns are unanswerable from the current turn alone. A rules engine
resolves every query exactly, and a brute-force pass over the plausible
referents yields the best accuracy any memoryless answerer can reach.

Generation, rendering, and the oracle are pure functions of (config, seed).
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, QueryParseError

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue", "yellow")
D_RAW = len(SHAPES) + len(COLORS) + 1  # one-hot shape, color, occupancy

_WORDS = ("where", "is", "the", "what", "color", "shape", "it", "that-one",
          "left-of", "right-of", "above", "below", "thing", "how", "many",
          "objects") + COLORS + SHAPES
TOKEN_TO_ID: Dict[str, int] = {w: i for i, w in enumerate(_WORDS)}
ID_TO_TOKEN: Dict[int, str] = {i: w for w, i in TOKEN_TO_ID.items()}
TOKEN_VOCAB = len(_WORDS)

DIRECTIONS = {"left-of": (0, -1), "right-of": (0, 1),
              "above": (-1, 0), "below": (1, 0)}
MAX_COUNT = 8


def answer_vocab(grid: Tuple[int, int] = (6, 6)) -> List[str]:
    """Closed answer list: cell names, colors, shapes, counts, none."""
    h, w = grid
    cells = [f"r{r}c{c}" for r in range(h) for c in range(w)]
    return (cells + list(COLORS) + list(SHAPES)
            + [str(n) for n in range(MAX_COUNT + 1)] + ["none"])


def answer_id(label: str, grid: Tuple[int, int] = (6, 6)) -> int:
    vocab = answer_vocab(grid)
    try:
        return vocab.index(label)
    except ValueError:
        raise ContractError(f"label {label!r} not in the answer vocabulary")


@dataclass(frozen=True)
class SceneObject:
    obj_id: int
    row: int
    col: int
    shape: str
    color: str


@dataclass(frozen=True)
class Scene:
    h: int
    w: int
    objects: Tuple[SceneObject, ...]

    def at(self, row: int, col: int) -> Optional[SceneObject]:
        for o in self.objects:
            if o.row == row and o.col == col:
                return o
        return None

    def validate(self):
        if len(self.objects) < 2:
            raise ContractError("scene needs at least two objects")
        cells = {(o.row, o.col) for o in self.objects}
        if len(cells) != len(self.objects):
            raise ContractError("two objects share a cell")
        ids = {o.obj_id for o in self.objects}
        if len(ids) != len(self.objects):
            raise ContractError("object ids are not unique")
        for o in self.objects:
            if not (0 <= o.row < self.h and 0 <= o.col < self.w):
                raise ContractError(f"object {o.obj_id} outside the grid")


@dataclass(frozen=True)
class TurnInput:
    # the rendered tensor is derived from the scene, so it is excluded
    # from equality (ndarrays also have no useful ==)
    visual: np.ndarray = field(compare=False)
    query_tokens: Tuple[int, ...] = ()
    target_answer_id: int = 0
    dependency_depth: int = 0


@dataclass(frozen=True)
class Episode:
    scene: Scene
    turns: Tuple[TurnInput, ...]
    seed: int


@dataclass(frozen=True)
class GenConfig:
    grid: Tuple[int, int] = (6, 6)
    turns: int = 6
    min_objects: int = 6
    max_objects: int = 9
    count_turn_prob: float = 0.15
    min_entropy_bits: float = 1.0
    max_attempts: int = 500

    def validate(self):
        h, w = self.grid
        if h < 2 or w < 2:
            raise ConfigError(f"grid must be at least 2x2, got {self.grid}")
        if self.turns < 2:
            raise ConfigError(f"episodes need >= 2 turns, got {self.turns}")
        if not 2 <= self.min_objects <= self.max_objects <= h * w:
            raise ConfigError(
                f"object range [{self.min_objects}, {self.max_objects}] "
                f"invalid for a {h}x{w} grid")
        if not 0.0 <= self.count_turn_prob < 0.5:
            raise ConfigError("count_turn_prob must lie in [0, 0.5)")


def render_grid(scene: Scene) -> np.ndarray:
    """One-hot channel tensor; lossless (see scene_from_grid)."""
    out = np.zeros((scene.h, scene.w, D_RAW))
    for o in scene.objects:
        out[o.row, o.col, SHAPES.index(o.shape)] = 1.0
        out[o.row, o.col, len(SHAPES) + COLORS.index(o.color)] = 1.0
        out[o.row, o.col, D_RAW - 1] = 1.0
    return out


def scene_from_grid(grid: np.ndarray) -> Scene:
    """Inverse of render_grid; ids assigned in row-major order."""
    h, w, c = grid.shape
    if c != D_RAW:
        raise ContractError(f"expected {D_RAW} channels, got {c}")
    objects = []
    for r in range(h):
        for cc in range(w):
            cell = grid[r, cc]
            if cell[D_RAW - 1] != 1.0:
                if cell.any():
                    raise ContractError(f"cell ({r},{cc}) has channels set "
                                        f"without occupancy")
                continue
            shape_hot = cell[:len(SHAPES)]
            color_hot = cell[len(SHAPES):len(SHAPES) + len(COLORS)]
            if shape_hot.sum() != 1.0 or color_hot.sum() != 1.0:
                raise ContractError(f"cell ({r},{cc}) is not one-hot")
            objects.append(SceneObject(
                obj_id=len(objects), row=r, col=cc,
                shape=SHAPES[int(np.argmax(shape_hot))],
                color=COLORS[int(np.argmax(color_hot))]))
    scene = Scene(h=h, w=w, objects=tuple(objects))
    scene.validate()
    return scene


def unique_signature_objects(scene: Scene) -> List[SceneObject]:
    """Objects whose (color, shape) pair appears exactly once in the scene.

    Only these can be established by attribute, so they are exactly the
    candidate referents a memoryless answerer must weigh.
    """
    counts: Dict[Tuple[str, str], int] = {}
    for o in scene.objects:
        key = (o.color, o.shape)
        counts[key] = counts.get(key, 0) + 1
    return [o for o in scene.objects if counts[(o.color, o.shape)] == 1]


# ---------------------------------------------------------------------------
# query grammar

def _toks(*words: str) -> Tuple[int, ...]:
    return tuple(TOKEN_TO_ID[w] for w in words)


def query_establish(color: str, shape: str) -> Tuple[int, ...]:
    return _toks("where", "is", "the", color, shape)


def query_recall(kind: str, ref: str) -> Tuple[int, ...]:
    if kind == "where":
        return _toks("where", "is", ref)
    if kind == "color":
        return _toks("what", "color", "is", ref)
    if kind == "shape":
        return _toks("what", "shape", "is", ref)
    raise ContractError(f"unknown recall kind {kind!r}")


def query_relational(kind: str, direction: str, ref: str) -> Tuple[int, ...]:
    if kind == "shape":
        return _toks("what", "is", direction, ref)
    if kind == "color":
        return _toks("what", "color", "is", "the", "thing", direction, ref)
    raise ContractError(f"unknown relational kind {kind!r}")


def query_count(color: str) -> Tuple[int, ...]:
    return _toks("how", "many", color, "objects")


def tokens_to_text(tokens: Sequence[int]) -> str:
    return " ".join(ID_TO_TOKEN[t] for t in tokens)


# ---------------------------------------------------------------------------
# rules engine

def _referent_stack(history: Sequence[Sequence[int]],
                    scene: Scene) -> List[SceneObject]:
    """Referents established so far, oldest first."""
    stack = []
    for turn_tokens in history:
        words = [ID_TO_TOKEN[t] for t in turn_tokens]
        if (len(words) == 5 and words[:3] == ["where", "is", "the"]
                and words[3] in COLORS and words[4] in SHAPES):
            matches = [o for o in scene.objects
                       if o.color == words[3] and o.shape == words[4]]
            if len(matches) != 1:
                raise QueryParseError(
                    f"establish query {' '.join(words)!r} matches "
                    f"{len(matches)} objects")
            stack.append(matches[0])
    return stack


def _resolve_reference(word: str,
                       stack: Sequence[SceneObject]) -> SceneObject:
    if not stack:
        raise QueryParseError(f"reference {word!r} before any referent "
                              f"was established")
    if word == "it":
        return stack[-1]
    if word == "that-one":
        return stack[-2] if len(stack) >= 2 else stack[-1]
    raise QueryParseError(f"unknown reference token {word!r}")


def _answer_about(scene: Scene, referent: SceneObject, words: List[str],
                  grid: Tuple[int, int]) -> int:
    """Evaluate a parsed reference query against a concrete referent."""
    if words[0] == "where":                       # where is REF
        return answer_id(f"r{referent.row}c{referent.col}", grid)
    if words[:3] == ["what", "color", "is"] and len(words) == 4:
        return answer_id(referent.color, grid)
    if words[:3] == ["what", "shape", "is"] and len(words) == 4:
        return answer_id(referent.shape, grid)
    if words[:2] == ["what", "is"] and len(words) == 4:  # what is DIR REF
        dr, dc = DIRECTIONS[words[2]]
        hit = scene.at(referent.row + dr, referent.col + dc)
        return answer_id(hit.shape if hit else "none", grid)
    if words[:5] == ["what", "color", "is", "the", "thing"]:
        dr, dc = DIRECTIONS[words[5]]
        hit = scene.at(referent.row + dr, referent.col + dc)
        return answer_id(hit.color if hit else "none", grid)
    raise QueryParseError(f"cannot parse query {' '.join(words)!r}")


def oracle_answer(scene: Scene, history: Sequence[Sequence[int]],
                  query_tokens: Sequence[int]) -> int:
    """Exact answer id for a query, given the dialogue so far."""
    grid = (scene.h, scene.w)
    words = [ID_TO_TOKEN[t] for t in query_tokens]
    if (len(words) == 5 and words[:3] == ["where", "is", "the"]
            and words[3] in COLORS and words[4] in SHAPES):
        matches = [o for o in scene.objects
                   if o.color == words[3] and o.shape == words[4]]
        if len(matches) != 1:
            raise QueryParseError(
                f"establish query {' '.join(words)!r} matches "
                f"{len(matches)} objects")
        o = matches[0]
        return answer_id(f"r{o.row}c{o.col}", grid)
    if words[:2] == ["how", "many"] and len(words) == 4:
        n = sum(1 for o in scene.objects if o.color == words[2])
        if n > MAX_COUNT:
            raise QueryParseError(f"count {n} exceeds the answer vocabulary")
        return answer_id(str(n), grid)
    if words[-1] in ("it", "that-one"):
        stack = _referent_stack(history, scene)
        referent = _resolve_reference(words[-1], stack)
        return _answer_about(scene, referent, words, grid)
    raise QueryParseError(f"cannot parse query {' '.join(words)!r}")


# ---------------------------------------------------------------------------
# memoryless analysis

def reference_answer_marginal(scene: Scene,
                              query_tokens: Sequence[int]) -> Dict[int, float]:
    """Answer distribution a memoryless observer faces on a reference query.

    Every unique-signature object is an equally likely referent (the
    generator draws referents uniformly without replacement from that set,
    so each pronoun's marginal is uniform over it).
    """
    words = [ID_TO_TOKEN[t] for t in query_tokens]
    if words[-1] not in ("it", "that-one"):
        raise ContractError("marginal is defined for reference queries only")
    grid = (scene.h, scene.w)
    candidates = unique_signature_objects(scene)
    if not candidates:
        raise ContractError("scene has no unique-signature objects")
    marginal: Dict[int, float] = {}
    p = 1.0 / len(candidates)
    for o in candidates:
        a = _answer_about(scene, o, words, grid)
        marginal[a] = marginal.get(a, 0.0) + p
    return marginal


def marginal_entropy_bits(marginal: Dict[int, float]) -> float:
    probs = np.array(sorted(marginal.values()))
    return float(-(probs * np.log2(probs)).sum())


def memoryless_ceiling(episodes: Sequence[Episode]) -> Tuple[float, int]:
    """Best possible accuracy on depth>=1 turns without dialogue history.

    Bayes answerer: per turn, pick the mode of the reference marginal;
    expected accuracy is the mean of the per-turn mode probabilities.
    Returns (ceiling, number of depth>=1 turns).
    """
    total = 0.0
    n = 0
    for ep in episodes:
        for turn in ep.turns:
            if turn.dependency_depth < 1:
                continue
            marg = reference_answer_marginal(ep.scene, turn.query_tokens)
            total += max(marg.values())
            n += 1
    if n == 0:
        raise ContractError("no depth>=1 turns in the episode set")
    return total / n, n


# ---------------------------------------------------------------------------
# generation

def _sample_scene(rng: np.random.Generator, cfg: GenConfig) -> Scene:
    h, w = cfg.grid
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    cells = rng.choice(h * w, size=n, replace=False)
    objects = []
    for idx in sorted(int(c) for c in cells):  # row-major ids
        objects.append(SceneObject(
            obj_id=len(objects), row=idx // w, col=idx % w,
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            color=COLORS[int(rng.integers(len(COLORS)))]))
    return Scene(h=h, w=w, objects=tuple(objects))


def _scene_admissible(scene: Scene) -> bool:
    for color in COLORS:
        if sum(1 for o in scene.objects if o.color == color) > MAX_COUNT:
            return False
    return len(unique_signature_objects(scene)) >= 4


def _draw_reference_query(rng: np.random.Generator,
                          ref: str) -> Tuple[int, ...]:
    kinds = ["color", "shape", "where", "rel-shape", "rel-color"]
    probs = [0.30, 0.30, 0.15, 0.125, 0.125]
    kind = kinds[int(rng.choice(len(kinds), p=probs))]
    if kind in ("color", "shape", "where"):
        return query_recall(kind, ref)
    direction = list(DIRECTIONS)[int(rng.integers(len(DIRECTIONS)))]
    return query_relational(kind.split("-")[1], direction, ref)


def gen_episode(config: GenConfig, seed: int) -> Episode:
    """Deterministic episode; resamples internally until every reference
    turn leaves a memoryless observer more than min_entropy_bits of
    uncertainty, so no invalid or trivially guessable episode is emitted."""
    config.validate()
    rng = np.random.default_rng(seed)
    for _ in range(config.max_attempts):
        scene = _sample_scene(rng, config)
        if not _scene_admissible(scene):
            continue
        candidates = unique_signature_objects(scene)
        pick = rng.choice(len(candidates), size=2, replace=False)
        ref_a, ref_b = candidates[int(pick[0])], candidates[int(pick[1])]
        established = {"A": 1, "B": 3}  # turn positions (1-based)

        queries: List[Tuple[int, ...]] = []
        depths: List[int] = []
        ok = True
        for pos in range(1, config.turns + 1):
            if pos == 1:
                queries.append(query_establish(ref_a.color, ref_a.shape))
                depths.append(0)
                continue
            if pos == 3:
                queries.append(query_establish(ref_b.color, ref_b.shape))
                depths.append(0)
                continue
            # a count question occasionally replaces turn 4 only; later
            # turns stay reference turns so deep lookbacks keep their share
            if pos == 4 and rng.random() < config.count_turn_prob:
                queries.append(query_count(
                    COLORS[int(rng.integers(len(COLORS)))]))
                depths.append(0)
                continue
            # reference turn: odd positions look back at A, even at B
            if pos == 2 or (pos >= 4 and pos % 2 == 1):
                key, ref_word = "A", ("it" if pos == 2 else "that-one")
            else:
                key, ref_word = "B", "it"
            q = _draw_reference_query(rng, ref_word)
            marg = reference_answer_marginal(scene, q)
            if marginal_entropy_bits(marg) <= config.min_entropy_bits:
                ok = False
                break
            queries.append(q)
            depths.append(pos - established[key])
        if not ok:
            continue

        visual = render_grid(scene)
        turns = []
        for pos, (q, depth) in enumerate(zip(queries, depths), start=1):
            target = oracle_answer(scene, queries[:pos - 1], q)
            turns.append(TurnInput(visual=visual, query_tokens=q,
                                   target_answer_id=target,
                                   dependency_depth=depth))
        return Episode(scene=scene, turns=tuple(turns), seed=seed)
    raise ContractError(f"seed {seed}: no admissible episode within "
                        f"{config.max_attempts} attempts")


_EVAL_SEED_OFFSET = 1_000_000


def make_splits(n_train: int, n_eval: int, base_seed: int,
                config: GenConfig = GenConfig()):
    """Disjoint train/eval episode sets from disjoint seed ranges."""
    train = [gen_episode(config, base_seed + i) for i in range(n_train)]
    evals = [gen_episode(config, base_seed + _EVAL_SEED_OFFSET + i)
             for i in range(n_eval)]
    return train, evals


# ---------------------------------------------------------------------------
# structured text export

def episode_to_text(ep: Episode) -> str:
    """One episode as readable lines; see episode_from_text."""
    grid = (ep.scene.h, ep.scene.w)
    vocab = answer_vocab(grid)
    lines = [f"seed {ep.seed}", f"grid {ep.scene.h} {ep.scene.w}",
             f"objects {len(ep.scene.objects)}"]
    for o in ep.scene.objects:
        lines.append(f"object {o.obj_id} {o.row} {o.col} {o.color} {o.shape}")
    lines.append(f"turns {len(ep.turns)}")
    for t in ep.turns:
        lines.append(f"turn depth={t.dependency_depth} "
                     f"answer={vocab[t.target_answer_id]} "
                     f"query={tokens_to_text(t.query_tokens)}")
    return "\n".join(lines) + "\n"


def episode_from_text(text: str) -> Episode:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    try:
        seed = int(lines[0].split()[1])
        h, w = (int(x) for x in lines[1].split()[1:3])
        n_obj = int(lines[2].split()[1])
        objects = []
        for ln in lines[3:3 + n_obj]:
            _, oid, r, c, color, shape = ln.split()
            objects.append(SceneObject(obj_id=int(oid), row=int(r),
                                       col=int(c), shape=shape, color=color))
        scene = Scene(h=h, w=w, objects=tuple(objects))
        scene.validate()
        vocab = answer_vocab((h, w))
        n_turns = int(lines[3 + n_obj].split()[1])
        visual = render_grid(scene)
        turns = []
        for ln in lines[4 + n_obj:4 + n_obj + n_turns]:
            head, query = ln.split("query=", 1)
            fields = dict(part.split("=", 1)
                          for part in head.split()[1:] if "=" in part)
            tokens = tuple(TOKEN_TO_ID[wd] for wd in query.split())
            turns.append(TurnInput(
                visual=visual, query_tokens=tokens,
                target_answer_id=vocab.index(fields["answer"]),
                dependency_depth=int(fields["depth"])))
    except (IndexError, KeyError, ValueError) as exc:
        raise ContractError(f"malformed episode text: {exc}")
    return Episode(scene=scene, turns=tuple(turns), seed=seed)
