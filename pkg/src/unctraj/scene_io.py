"""Plain-text scene documents.

Grammar (one record per line, whitespace separated, ``#`` starts a comment
line)::

    document    := "scene" VERSION NL header record* "end" NL
    header      := "seed" INT NL "layout" WORD NL "ego" X Y HEADING NL
    record      := element | agent | observation
    element     := "element" ID CLASS N (X Y){N} NL
    agent       := "agent" ID "history" (X Y){20} "future" (X Y){30} NL
    observation := "observation" ELEMENT_ID VERTEX TRUE_CLASS OBSERVED_CLASS
                   U V TU TV C0 .. C9 NL

CLASS is one of ``boundary divider ped_crossing centerline``. Observation
classes are integer indices, U V the noisy normalized position, TU TV the
true normalized position and C0..C9 the context vector. ``layout`` may be
``-`` when unknown. A file may hold several documents back to back.

Numbers are written in a canonical form: at least six significant digits,
more when needed to round-trip the float64 value exactly. Parsing then
emitting a canonical document reproduces it byte for byte.
"""

from __future__ import annotations

import numpy as np

from .map_model import FUTURE_LEN, HISTORY_LEN, Agent, EgoPose, ElementClass, MapElement, Scene, Trajectory
from .noise_sim import CONTEXT_WIDTH, ObservationSet

FORMAT_VERSION = 1


class SceneFormatError(ValueError):
    pass


def fmt_float(v: float) -> str:
    v = float(v)
    s = format(v, "#.6g")
    if float(s) == v:
        return s
    # Six digits were not enough; the shortest round-trip repr has more.
    return repr(v)


def _pts(arr) -> str:
    return " ".join(fmt_float(v) for v in np.asarray(arr, dtype=np.float64).ravel())


def emit_scene(scene: Scene, observations: ObservationSet | None = None) -> str:
    lines = [
        f"scene {FORMAT_VERSION}",
        f"seed {int(scene.seed)}",
        f"layout {scene.layout or '-'}",
        f"ego {fmt_float(scene.ego_pose.x)} {fmt_float(scene.ego_pose.y)} {fmt_float(scene.ego_pose.heading)}",
    ]
    for el in scene.elements:
        lines.append(f"element {el.id} {el.cls.label} {el.points.shape[0]} {_pts(el.points)}")
    for ag in scene.agents:
        lines.append(f"agent {ag.id} history {_pts(ag.history.samples)} future {_pts(ag.future.samples)}")
    if observations is not None:
        o = observations
        for i in range(len(o)):
            lines.append(
                "observation {} {} {} {} {} {} {}".format(
                    int(o.element_ids[i]),
                    int(o.vertex_index[i]),
                    int(o.true_class[i]),
                    int(o.observed_class[i]),
                    _pts(o.positions[i]),
                    _pts(o.targets[i]),
                    _pts(o.context[i]),
                )
            )
    lines.append("end")
    return "\n".join(lines) + "\n"


def emit_scenes(items) -> str:
    """Concatenate documents; ``items`` yields scenes or (scene, observations) pairs."""
    out = []
    for it in items:
        if isinstance(it, Scene):
            out.append(emit_scene(it))
        else:
            out.append(emit_scene(*it))
    return "".join(out)


def _floats(tokens, lineno):
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise SceneFormatError(f"line {lineno}: bad number ({exc})") from None


def _parse_document(lines):
    seed, layout, ego = None, "", EgoPose()
    elements, agents, obs_rows = [], [], []
    for lineno, tok in lines:
        kind = tok[0]
        if kind == "seed":
            seed = int(tok[1])
        elif kind == "layout":
            layout = "" if tok[1] == "-" else tok[1]
        elif kind == "ego":
            x, y, h = _floats(tok[1:4], lineno)
            ego = EgoPose(float(x), float(y), float(h))
        elif kind == "element":
            eid, cls, n = int(tok[1]), ElementClass.from_label(tok[2]), int(tok[3])
            vals = _floats(tok[4:], lineno)
            if vals.size != 2 * n:
                raise SceneFormatError(f"line {lineno}: element {eid} declares {n} points, found {vals.size / 2:g}")
            elements.append(MapElement(eid, cls, vals.reshape(n, 2)))
        elif kind == "agent":
            aid = int(tok[1])
            if tok[2] != "history" or tok[3 + 2 * HISTORY_LEN] != "future":
                raise SceneFormatError(f"line {lineno}: malformed agent record")
            hist = _floats(tok[3 : 3 + 2 * HISTORY_LEN], lineno).reshape(-1, 2)
            fut = _floats(tok[4 + 2 * HISTORY_LEN :], lineno)
            if fut.size != 2 * FUTURE_LEN:
                raise SceneFormatError(f"line {lineno}: agent {aid} future must have {FUTURE_LEN} points")
            agents.append(Agent(Trajectory(aid, hist), Trajectory(aid, fut.reshape(-1, 2))))
        elif kind == "observation":
            if len(tok) != 5 + 4 + CONTEXT_WIDTH:
                raise SceneFormatError(f"line {lineno}: observation record has {len(tok)} fields")
            obs_rows.append(([int(t) for t in tok[1:5]], _floats(tok[5:], lineno)))
        else:
            raise SceneFormatError(f"line {lineno}: unknown record {kind!r}")
    if seed is None:
        raise SceneFormatError("document without seed")
    scene = Scene(tuple(elements), tuple(agents), ego, seed, layout)
    if not obs_rows:
        return scene, None
    ints = np.array([r[0] for r in obs_rows], dtype=np.int64)
    vals = np.vstack([r[1] for r in obs_rows])
    obs = ObservationSet(
        positions=vals[:, 0:2],
        element_ids=ints[:, 0],
        vertex_index=ints[:, 1],
        true_class=ints[:, 2],
        observed_class=ints[:, 3],
        context=vals[:, 4:],
        targets=vals[:, 2:4],
    )
    return scene, obs


def parse_scenes(text: str) -> list:
    """All documents in ``text`` as a list of ``(scene, observations or None)``."""
    docs, current, open_ = [], [], False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if tok[0] == "scene":
            if open_:
                raise SceneFormatError(f"line {lineno}: nested scene document")
            if int(tok[1]) != FORMAT_VERSION:
                raise SceneFormatError(f"line {lineno}: unsupported version {tok[1]}")
            open_, current = True, []
        elif tok[0] == "end":
            if not open_:
                raise SceneFormatError(f"line {lineno}: 'end' outside a document")
            docs.append(_parse_document(current))
            open_ = False
        elif not open_:
            raise SceneFormatError(f"line {lineno}: record outside a document")
        else:
            current.append((lineno, tok))
    if open_:
        raise SceneFormatError("unterminated scene document")
    return docs


def parse_scene(text: str):
    docs = parse_scenes(text)
    if len(docs) != 1:
        raise SceneFormatError(f"expected one document, found {len(docs)}")
    return docs[0]
