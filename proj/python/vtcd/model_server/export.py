"""Writing a served model's site activations as a tensor store dataset."""

import os

from .errors import ServerError
from .formats import Manifest, write_volume


def select_sites(model, tags=None):
    sites = model.sites()
    if not tags:
        return sites
    by_tag = {s.tag: s for s in sites}
    missing = [t for t in tags if t not in by_tag]
    if missing:
        raise ServerError("invalid-argument", f"unknown site tags: {', '.join(missing)}")
    return [by_tag[t] for t in dict.fromkeys(tags)]


def export_features(model, videos, sites, out_dir):
    """Writes inputs and per-site C x T x H x W volumes plus manifest.json.

    `sites` is a list of Site (None for all); returns the Manifest."""
    videos = list(videos)
    sites = model.sites() if sites is None else list(sites)
    manifest = Manifest(videos)
    os.makedirs(os.path.join(out_dir, "inputs"), exist_ok=True)
    for vid in videos:
        rel = f"inputs/{vid}.vtcd"
        write_volume(model.videos[vid] if vid in model.videos else model._input(vid), os.path.join(out_dir, rel))
        manifest.inputs[vid] = rel
    entries = {s: {"site": s, "channels": None, "dims": model.grid, "files": {}} for s in sites}
    for vid in videos:
        for site, volume in model.site_features(vid, sites).items():
            entry = entries[site]
            if tuple(volume.shape[1:]) != model.grid:
                raise ServerError("invalid-argument",
                                  f"site {site.tag} produced grid {volume.shape[1:]}, advertised {model.grid}")
            if entry["channels"] not in (None, volume.shape[0]):
                raise ServerError("invalid-argument", f"site {site.tag} changed channel count between videos")
            entry["channels"] = volume.shape[0]
            rel = f"volumes/{site.tag}/{vid}.vtcd"
            os.makedirs(os.path.join(out_dir, "volumes", site.tag), exist_ok=True)
            write_volume(volume, os.path.join(out_dir, rel))
            entry["files"][vid] = rel
    manifest.sites = [entries[s] for s in sites]
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return manifest
