"""Model text format.

::

    fcf-model 1
    variant discrete
    window 60 120
    depth 2
    bank
    fcf-bank 1
    ...
    end-bank
    cascade none
    trees 2
    tree 0.549306144334 7
    split 3 12 4 9 0.0712500000000
    leaf 1
    ...

Nodes are listed in pre-order (split, then its left subtree, then its right
subtree). A split line names its feature as ``channel filter cell_x
cell_y``. Reals are written with 12 significant digits, which is the
precision they were rounded to when fitted, so a saved model scores
bit-identically after loading.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

from fcf.exceptions import FcfError, ParseError
from fcf.services.channels import N_CHANNELS
from fcf.services.featuremap import FeatureIndex
from fcf.services.forest import MODEL_DIGITS, BoostedForest, Leaf, Node, SplitNode, Tree
from fcf.storage.banks import _content_lines, dump_bank, parse_bank_lines
from fcf.utils.numeric import format_sig

logger = logging.getLogger(__name__)

MODEL_MAGIC = "fcf-model 1"


def _real(value: float) -> str:
    return format_sig(value, MODEL_DIGITS)


def _dump_node(node: Node, out: List[str]) -> None:
    if isinstance(node, Leaf):
        out.append(f"leaf {_real(node.value)}")
        return
    f = node.feature
    out.append(f"split {f.channel} {f.filter} {f.cell_x} {f.cell_y} {_real(node.threshold)}")
    _dump_node(node.left, out)
    _dump_node(node.right, out)


def dump_model(forest: BoostedForest) -> str:
    if forest.bank is None:
        raise FcfError("cannot save a forest without its filter bank")
    lines = [
        MODEL_MAGIC,
        f"variant {forest.variant}",
        f"window {forest.window[0]} {forest.window[1]}",
        f"depth {forest.depth}",
        "bank",
    ]
    lines.extend(dump_bank(forest.bank).splitlines())
    lines.append("end-bank")
    if forest.cascade is None:
        lines.append("cascade none")
    else:
        lines.append("cascade " + " ".join(_real(v) for v in forest.cascade))
    lines.append(f"trees {len(forest.trees)}")
    for tree, weight in zip(forest.trees, forest.tree_weights):
        nodes: List[str] = []
        _dump_node(tree.root, nodes)
        lines.append(f"tree {_real(weight)} {len(nodes)}")
        lines.extend(nodes)
    return "\n".join(lines) + "\n"


def save_model(forest: BoostedForest, path, header: Iterable[str] = ()) -> None:
    text = "".join(f"# {line}\n" for line in header) + dump_model(forest)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"Saved {len(forest)}-tree {forest.variant} model to {path}")


class _Reader:
    def __init__(self, lines: List[Tuple[int, str]], path: Optional[str]):
        self.lines = lines
        self.path = path
        self.pos = 0

    def next(self, what: str) -> Tuple[int, List[str]]:
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file, expected {what}", path=self.path)
        number, line = self.lines[self.pos]
        self.pos += 1
        return number, line.split()

    def keyed(self, key: str, count: Optional[int] = None) -> Tuple[int, List[str]]:
        number, parts = self.next(f"'{key}'")
        if parts[0] != key or (count is not None and len(parts) != count + 1):
            raise ParseError(f"expected '{key}' line, got {' '.join(parts)!r}", path=self.path, line=number)
        return number, parts[1:]

    def fail(self, message: str, number: int):
        return ParseError(message, path=self.path, line=number)


def _read_node(reader: _Reader, remaining: List[int]) -> Node:
    number, parts = reader.next("a tree node")
    remaining[0] -= 1
    try:
        if parts[0] == "leaf" and len(parts) == 2:
            return Leaf(float(parts[1]))
        if parts[0] == "split" and len(parts) == 6:
            feature = FeatureIndex(*(int(v) for v in parts[1:5]))
            threshold = float(parts[5])
            left = _read_node(reader, remaining)
            right = _read_node(reader, remaining)
            return SplitNode(feature=feature, threshold=threshold, left=left, right=right)
    except ValueError:
        raise reader.fail(f"non-numeric node field in {' '.join(parts)!r}", number)
    raise reader.fail(f"expected a 'split' or 'leaf' line, got {' '.join(parts)!r}", number)


def parse_model(text: str, path: Optional[str] = None) -> BoostedForest:
    reader = _Reader(_content_lines(text), path)
    number, parts = reader.next(f"'{MODEL_MAGIC}'")
    if " ".join(parts) != MODEL_MAGIC:
        raise reader.fail(f"missing '{MODEL_MAGIC}' header", number)
    _, (variant,) = reader.keyed("variant", 1)
    number, window_parts = reader.keyed("window", 2)
    _, depth_parts = reader.keyed("depth", 1)
    try:
        window = (int(window_parts[0]), int(window_parts[1]))
        depth = int(depth_parts[0])
    except ValueError:
        raise reader.fail("window and depth must be integers", number)

    reader.keyed("bank", 0)
    start = reader.pos
    while reader.pos < len(reader.lines) and reader.lines[reader.pos][1] != "end-bank":
        reader.pos += 1
    if reader.pos >= len(reader.lines):
        raise ParseError("missing 'end-bank'", path=path)
    bank = parse_bank_lines(reader.lines[start:reader.pos], path=path)
    reader.pos += 1

    number, cascade_parts = reader.keyed("cascade")
    try:
        cascade = None if cascade_parts == ["none"] else tuple(float(v) for v in cascade_parts)
    except ValueError:
        raise reader.fail("non-numeric cascade trace", number)

    number, count_parts = reader.keyed("trees", 1)
    try:
        n_trees = int(count_parts[0])
    except ValueError:
        raise reader.fail("tree count must be an integer", number)

    trees: List[Tree] = []
    weights: List[float] = []
    for _ in range(n_trees):
        number, tree_parts = reader.keyed("tree", 2)
        try:
            weight, n_nodes = float(tree_parts[0]), int(tree_parts[1])
        except ValueError:
            raise reader.fail("malformed tree header", number)
        remaining = [n_nodes]
        root = _read_node(reader, remaining)
        if remaining[0] != 0:
            raise reader.fail(f"tree declares {n_nodes} nodes but has {n_nodes - remaining[0]}", number)
        trees.append(Tree(root=root, depth=depth))
        weights.append(weight)
    if reader.pos != len(reader.lines):
        raise reader.fail("unexpected content after the last tree", reader.lines[reader.pos][0])

    try:
        forest = BoostedForest(
            trees=tuple(trees),
            tree_weights=tuple(weights),
            variant=variant,
            depth=depth,
            window=window,
            bank=bank,
            cascade=cascade,
        )
    except FcfError as e:
        raise ParseError(str(e), path=path)
    if cascade is not None and len(cascade) != len(trees):
        raise ParseError(f"cascade trace has {len(cascade)} values for {len(trees)} trees", path=path)
    for node in forest.split_nodes():
        f = node.feature
        if not (0 <= f.channel < N_CHANNELS and 0 <= f.filter < len(bank)):
            raise ParseError(f"split node uses unknown feature {tuple(f)}", path=path)
    return forest


def load_model(path) -> BoostedForest:
    forest = parse_model(Path(path).read_text(encoding="utf-8"), path=str(path))
    logger.info(f"Loaded {len(forest)}-tree {forest.variant} model from {path}")
    return forest
