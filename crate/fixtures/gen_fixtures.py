#!/usr/bin/env python3
"""Generates the fixture corpus and its golden outputs.

This script is deliberately independent of the Rust code: retrieval
ranking, IoU assignment, similarity Procrustes (numpy SVD), temporal
resampling and the canonical pose-video writer are all re-implemented
here. Goldens under */expected/ are what the Rust pipeline must reproduce
byte for byte.

Usage: python3 fixtures/gen_fixtures.py   (from the repository root)
"""

import json
import math
import os

import numpy as np

ROOT = os.path.dirname(os.path.abspath(__file__))
EMB_DIM = 8

COCO17 = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]

# Standing person, image coordinates (y down), hip centre at the origin.
STAND = np.array([
    [0, -150], [-5, -155], [5, -155], [-12, -150], [12, -150],
    [-25, -120], [25, -120], [-32, -85], [32, -85], [-35, -50], [35, -50],
    [-15, 0], [15, 0], [-16, 45], [16, 45], [-17, 90], [17, 90],
], dtype=float)


# ----------------------------------------------------------------------------
# canonical writer


def fixed6(v):
    s = "%.6f" % v
    return "0.000000" if s == "-0.000000" else s


def q6(v):
    """Round to the value the canonical form will carry."""
    return float(fixed6(v))


def write_pose_video(video):
    out = ["{\n"]
    frames = video["frames"]
    if not frames:
        out.append('  "frames": [],\n')
    else:
        out.append('  "frames": [\n')
        for fi, fr in enumerate(frames):
            out.append("    {\n")
            out.append('      "frame_index": %d,\n' % fr["frame_index"])
            insts = fr["instances"]
            if not insts:
                out.append('      "instances": []\n')
            else:
                out.append('      "instances": [\n')
                for ii, inst in enumerate(insts):
                    out.append("        {\n")
                    out.append('          "instance_id": %d,\n' % inst["instance_id"])
                    out.append('          "keypoints": [\n')
                    kps = inst["keypoints"]
                    for ki, k in enumerate(kps):
                        out.append(
                            '            {"confidence": %s, "visible": %s, "x": %s, "y": %s}'
                            % (fixed6(k["confidence"]), "true" if k["visible"] else "false",
                               fixed6(k["x"]), fixed6(k["y"])))
                        out.append(",\n" if ki + 1 < len(kps) else "\n")
                    out.append("          ]\n")
                    out.append("        },\n" if ii + 1 < len(insts) else "        }\n")
                out.append("      ]\n")
            out.append("    },\n" if fi + 1 < len(frames) else "    }\n")
        out.append("  ],\n")
    out.append('  "height": %d,\n' % video["height"])
    if video.get("label") is not None:
        out.append('  "label": %s,\n' % json.dumps(video["label"], ensure_ascii=False))
    out.append('  "skeleton": [%s],\n' % ", ".join(json.dumps(j) for j in video["skeleton"]))
    out.append('  "width": %d\n' % video["width"])
    out.append("}\n")
    return "".join(out)


def save(path, text):
    full = os.path.join(ROOT, path)
    os.makedirs(os.path.dirname(full), exist_ok=True)
    with open(full, "w", encoding="utf-8") as f:
        f.write(text)


def save_json(path, obj):
    save(path, json.dumps(obj, indent=2) + "\n")


# ----------------------------------------------------------------------------
# pose synthesis


def keypoints(points, hidden=(), conf=0.9):
    kps = []
    for j, (x, y) in enumerate(points):
        if j in hidden:
            kps.append({"x": 0.0, "y": 0.0, "visible": False, "confidence": 0.0})
        else:
            kps.append({"x": q6(x), "y": q6(y), "visible": True, "confidence": q6(conf)})
    return kps


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def pose_stand(t, sway):
    p = STAND.copy()
    p[:, 0] += sway * math.sin(0.7 * t)
    return p


def pose_dance(t):
    p = STAND.copy()
    phase = 0.9 * t
    # arms up and swinging, hips swaying
    for j, side in ((7, -1), (8, 1)):
        p[j] = [side * 40, -150 + 12 * math.sin(phase)]
    for j, side in ((9, -1), (10, 1)):
        p[j] = [side * (35 + 10 * math.cos(phase)), -190 + 15 * math.sin(phase + side)]
    p[:, 0] += 10 * math.sin(phase)
    p[13:15, 0] += np.array([-8, 8]) * math.cos(phase)
    return p


def pose_sit(t, n):
    p = STAND.copy()
    a = min(1.0, t / max(1, n - 1))
    # upper body lowers, knees come forward
    p[:13, 1] += 45 * a
    p[13, :] += [-30 * a, 10 * a]
    p[14, :] += [30 * a, 10 * a]
    return p


def pose_fall(t, n):
    a = min(1.0, t / max(1, n - 1))
    p = STAND @ rot(-1.2 * a).T
    p[:, 1] += 40 * a
    return p


def pose_wave(t):
    p = STAND.copy()
    p[8] = [45, -140]
    p[10] = [55 + 15 * math.sin(1.3 * t), -185]
    return p


def pose_jump(t):
    p = STAND.copy()
    p[:, 1] -= 30 * abs(math.sin(0.8 * t))
    p[9:11, 1] -= 60
    return p


def place(points, scale, theta, tx, ty):
    return points @ (scale * rot(theta)).T + np.array([tx, ty])


def single_person_video(label, frames, width=320, height=320, hidden=()):
    return {
        "width": width,
        "height": height,
        "skeleton": COCO17,
        "label": label,
        "frames": [
            {"frame_index": i, "instances": [{"instance_id": 0, "keypoints": keypoints(pts, hidden)}]}
            for i, pts in enumerate(frames)
        ],
    }


# ----------------------------------------------------------------------------
# independent pipeline stages


def cosine(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def rank(db, q, k):
    scored = [(cosine(q, e["embedding"]), i, e["entry_id"]) for i, e in enumerate(db)]
    scored.sort(key=lambda s: (-s[0], s[1]))
    return scored[:k]


def kp_box(inst):
    pts = [(k["x"], k["y"]) for k in inst["keypoints"] if k["visible"]]
    if not pts:
        return None
    xs, ys = zip(*pts)
    return (min(xs), min(ys), max(xs), max(ys))


def iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return 0.0 if union <= 0 else inter / union


def greedy_assign(dets, frame, thr):
    cands = []
    for di, d in enumerate(dets):
        for inst in frame["instances"]:
            b = kp_box(inst)
            if b is None:
                continue
            s = iou(d["box"], b)
            if s >= thr and s > 0:
                cands.append((-s, di, inst["instance_id"]))
    cands.sort()
    used_d, used_i, pairs = set(), set(), []
    for _, di, iid in cands:
        if di in used_d or iid in used_i:
            continue
        used_d.add(di)
        used_i.add(iid)
        pairs.append((di, iid))
    return pairs


def procrustes(ps, pd):
    """Least-squares s, R (det +1), t with ps ~ s R pd + t."""
    ps, pd = np.asarray(ps, float), np.asarray(pd, float)
    mu_s, mu_d = ps.mean(0), pd.mean(0)
    a, b = pd - mu_d, ps - mu_s
    h = b.T @ a
    u, sig, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    r = u @ np.diag([1.0, d]) @ vt
    s = (sig[0] + d * sig[1]) / (a ** 2).sum()
    t = mu_s - s * r @ mu_d
    return s, r, t


def nearest(i, n_out, n_in):
    if n_out == 1:
        return 0
    return (2 * i * (n_in - 1) + (n_out - 1)) // (2 * (n_out - 1))


def sample_frames(video, count):
    n = len(video["frames"])
    if n <= count:
        return video
    out = dict(video)
    out["frames"] = [video["frames"][nearest(i, count, n)] for i in range(count)]
    return out


def edit(source, pairs, retrieved):
    out = json.loads(json.dumps(source))
    first = source["frames"][0]
    r0 = retrieved["frames"][0]["instances"][0]["keypoints"]
    n_out, n_in = len(source["frames"]), len(retrieved["frames"])
    for _, iid in pairs:
        anchor = next(i for i in first["instances"] if i["instance_id"] == iid)["keypoints"]
        use = [j for j in range(len(anchor)) if anchor[j]["visible"] and r0[j]["visible"]]
        ps = [[anchor[j]["x"], anchor[j]["y"]] for j in use]
        pd = [[r0[j]["x"], r0[j]["y"]] for j in use]
        s, r, t = procrustes(ps, pd)
        for i, fr in enumerate(out["frames"]):
            src = retrieved["frames"][nearest(i, n_out, n_in)]["instances"][0]["keypoints"]
            new = []
            for k in src:
                k = dict(k)
                if k["visible"]:
                    x, y = s * r @ np.array([k["x"], k["y"]]) + t
                    k["x"], k["y"] = float(x), float(y)
                new.append(k)
            for inst in fr["instances"]:
                if inst["instance_id"] == iid:
                    inst["keypoints"] = new
    return out


# ----------------------------------------------------------------------------
# database


LABEL_VECS = {
    "dance": [0.9, 0.1, 0.0, 0.2, 0.0, 0.1, 0.0, 0.0],
    "sit_down": [0.0, 0.8, 0.3, 0.0, 0.1, 0.0, 0.2, 0.0],
    "fall_down": [0.1, 0.3, 0.9, 0.0, 0.0, 0.2, 0.0, 0.1],
    "wave": [0.2, 0.0, 0.0, 0.9, 0.3, 0.0, 0.0, 0.1],
    "jump": [0.3, 0.0, 0.1, 0.1, 0.9, 0.0, 0.2, 0.0],
    "dance_slow": [0.8, 0.1, 0.0, 0.3, 0.1, 0.2, 0.0, 0.0],
}
LABELS = {
    "dance": "dance", "sit_down": "sit down", "fall_down": "fall down",
    "wave": "wave hand", "jump": "jump", "dance_slow": "slow dance",
}


def build_database():
    poses = {
        "dance": [place(pose_dance(t), 0.8, 0.05, 120, 200) for t in range(16)],
        "sit_down": [place(pose_sit(t, 5), 1.1, 0.0, 160, 180) for t in range(5)],
        "fall_down": [place(pose_fall(t, 12), 0.9, 0.1, 150, 210) for t in range(12)],
        "wave": [place(pose_wave(t), 1.0, -0.05, 140, 190) for t in range(10)],
        "jump": [place(pose_jump(t), 0.7, 0.0, 100, 220) for t in range(8)],
        "dance_slow": [place(pose_dance(0.5 * t), 1.2, -0.1, 170, 170) for t in range(14)],
    }
    hidden = {"sit_down": (3, 4), "fall_down": (1,)}
    manifest, videos = [], {}
    for eid, frames in poses.items():
        video = single_person_video(LABELS[eid], frames, hidden=hidden.get(eid, ()))
        rel = "poses/%s.json" % eid
        save("pose_db/" + rel, write_pose_video(video))
        videos[eid] = video
        manifest.append({
            "entry_id": eid,
            "label": LABELS[eid],
            "embedding": LABEL_VECS[eid],
            "pose_video_path": rel,
        })
    save_json("pose_db/manifest.json", manifest)
    return manifest, videos


# ----------------------------------------------------------------------------
# edit bundles


def two_people(n, girl_at, boy_at, hidden_boy=()):
    frames = []
    for t in range(n):
        girl = place(pose_stand(t, 3), *girl_at)
        boy = place(pose_stand(t + 2, 4), *boy_at)
        frames.append({"frame_index": t, "instances": [
            {"instance_id": 0, "keypoints": keypoints(girl)},
            {"instance_id": 1, "keypoints": keypoints(boy, hidden_boy)},
        ]})
    return frames


def padded_box(inst, pad):
    b = kp_box(inst)
    return [q6(b[0] - pad), q6(b[1] - pad * 1.5), q6(b[2] + pad), q6(b[3] + pad * 0.5)]


def bundle(name, source, detections, subject, action, query, db, videos, frame_count=12, thr=0.3):
    base = "bundles/%s/" % name
    save(base + "source.json", write_pose_video(source))
    save_json(base + "detections.json", detections)
    save(base + "answer.txt", "subject: %s\naction: %s\n" % (subject, action))
    save_json(base + "query_embedding.json", {"dim": len(query), "values": query})

    top = rank(db, query, 1)[0]
    retrieved = videos[top[2]]
    sampled = sample_frames(source, frame_count)
    first = sampled["frames"][0]
    pairs = greedy_assign(detections["detections"], first, thr)
    edited = edit(sampled, pairs, retrieved)
    save(base + "expected/edited_pose_video.json", write_pose_video(edited))
    save_json(base + "expected/summary.json", {
        "retrieved": top[2],
        "pairs": [list(p) for p in pairs],
        "frames": len(edited["frames"]),
    })


def build_bundles(db, videos):
    # two people, the girl dances
    src = {
        "width": 640, "height": 360, "skeleton": COCO17, "label": "a girl and a boy standing",
        "frames": two_people(12, (0.9, 0.02, 180, 250), (1.0, -0.03, 430, 245)),
    }
    girl = src["frames"][0]["instances"][0]
    dets = {"frame_index": 0, "detections": [
        {"phrase": "the girl", "box": padded_box(girl, 12), "score": 0.92},
    ]}
    q = [0.85, 0.15, 0.05, 0.2, 0.05, 0.1, 0.0, 0.02]
    bundle("e2e_girl_dance", src, dets, "the girl", "dance", q, db, videos)

    # boy with occluded face joints sits; short clip, short retrieved video
    src = {
        "width": 640, "height": 360, "skeleton": COCO17, "label": None,
        "frames": two_people(8, (0.85, 0.0, 150, 255), (1.05, 0.04, 470, 250), hidden_boy=(1, 2, 3)),
    }
    boy = src["frames"][0]["instances"][1]
    dets = {"frame_index": 0, "detections": [
        {"phrase": "the boy", "box": padded_box(boy, 10), "score": 0.88},
        {"phrase": "the boy", "box": [600.0, 10.0, 630.0, 40.0], "score": 0.31},
    ]}
    q = [0.05, 0.75, 0.35, 0.0, 0.1, 0.05, 0.15, 0.0]
    bundle("e2e_boy_sit", src, dets, "the boy", "sit down", q, db, videos)

    # three people over 20 frames; two get edited, one is left alone
    frames = []
    for t in range(20):
        people = [
            place(pose_stand(t, 2), 0.8, 0.0, 120, 260),
            place(pose_stand(t + 1, 2), 0.95, 0.05, 320, 255),
            place(pose_stand(t + 3, 2), 0.75, -0.02, 520, 262),
        ]
        frames.append({"frame_index": 2 * t, "instances": [
            {"instance_id": iid, "keypoints": keypoints(p)} for iid, p in zip((5, 2, 9), people)
        ]})
    src = {"width": 640, "height": 360, "skeleton": COCO17, "label": "three friends", "frames": frames}
    first = src["frames"][0]["instances"]
    dets = {"frame_index": 0, "detections": [
        {"phrase": "the kids", "box": padded_box(first[2], 9), "score": 0.8},
        {"phrase": "the kids", "box": padded_box(first[0], 11), "score": 0.85},
    ]}
    q = [0.1, 0.25, 0.95, 0.0, 0.05, 0.15, 0.0, 0.1]
    bundle("e2e_crowd_fall", src, dets, "the kids", "fall down", q, db, videos)


# ----------------------------------------------------------------------------
# procrustes and blending fixtures


def build_align_noisy(rng):
    pd = STAND + rng.normal(0, 4, STAND.shape)
    ps = place(STAND, 1.37, 0.61, 210, 140) + rng.normal(0, 6, STAND.shape)
    mask_ps = [True] * 17
    mask_pd = [True] * 17
    mask_ps[3] = False
    mask_pd[16] = False
    save_json("align_noisy_01.json", {
        "x_ps": [[q6(x), q6(y)] for x, y in ps],
        "mask_ps": mask_ps,
        "x_pd": [[q6(x), q6(y)] for x, y in pd],
        "mask_pd": mask_pd,
    })


def grid(h, w, f):
    return {"h": h, "w": w, "values": [f(r, c) for r in range(h) for c in range(w)]}


def build_blend_sched():
    # Subject drifts right across steps; values are dyadic so sums are exact.
    def hot(col):
        return lambda r, c: 1.0 if c == col else (0.25 if abs(c - col) == 1 else 0.0)

    steps = []
    for n, (inv_col, den_col) in zip((3, 2, 1), ((0, 1), (1, 2), (2, 3))):
        steps.append({
            "step": n,
            "c_inv": [grid(3, 4, hot(inv_col)), grid(3, 4, lambda r, c: 0.125 * r)],
            "s_inv": grid(3, 4, lambda r, c, n=n: 0.5 * (r + 1) + 0.0625 * c * n),
            "c_den": [grid(3, 4, hot(den_col)), grid(3, 4, lambda r, c: 0.125 * (2 - r))],
            "s_den": grid(3, 4, lambda r, c, n=n: 2.0 + 0.25 * r * c - 0.125 * n),
        })
    save_json("blend_sched_01.json", steps)


# ----------------------------------------------------------------------------
# metrics manifest


def build_metrics(rng):
    base = "metrics_small/"

    def emb(path, v):
        save_json(base + path, {"dim": len(v), "values": [q6(x) for x in v]})
        return path

    def video(prefix, frames, dim=6):
        vec = rng.normal(0, 1, dim)
        fr = [rng.normal(0, 1, dim) for _ in range(frames)]
        return {
            "video_id": prefix,
            "video_embedding": emb(prefix + "/video.json", vec),
            "frame_embeddings": [emb("%s/frame_%02d.json" % (prefix, i), f) for i, f in enumerate(fr)],
        }

    cases = []
    for i in range(3):
        case = {
            "case_id": "case_%02d" % i,
            "edited": video("case_%02d/edited" % i, 4),
            "source": video("case_%02d/source" % i, 4),
            "target_prompt_embedding": emb("case_%02d/target_prompt.json" % i, rng.normal(0, 1, 6)),
            "source_prompt_embedding": emb("case_%02d/source_prompt.json" % i, rng.normal(0, 1, 6)),
        }
        if i != 1:
            case["ground_truth"] = video("case_%02d/ground_truth" % i, 4)
        cases.append(case)
    save_json(base + "manifest.json", cases)


def main():
    rng = np.random.default_rng(20240601)
    db, videos = build_database()
    build_bundles(db, videos)
    build_align_noisy(rng)
    build_blend_sched()
    build_metrics(rng)


if __name__ == "__main__":
    main()
