// Vanilla canvas front end for the wasm demo. Build the module first:
//   wasm-pack build crates/demo --target web --out-dir www/pkg
// then serve crates/demo/www/ from any static file server.

import init, { alias_demo, filter_resample_demo, burgers_demo } from "./pkg/opreslab_demo.js";

const css = (name) => getComputedStyle(document.documentElement).getPropertyValue(name).trim();

function plot(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const pad = 28;
  let ymin = Infinity, ymax = -Infinity, xmin = Infinity, xmax = -Infinity;
  for (const s of series) {
    for (let i = 0; i < s.y.length; i++) {
      const y = opts.logy ? Math.log10(Math.max(s.y[i], 1e-22)) : s.y[i];
      if (y < ymin) ymin = y;
      if (y > ymax) ymax = y;
      const x = s.x ? s.x[i] : i;
      if (x < xmin) xmin = x;
      if (x > xmax) xmax = x;
    }
  }
  if (!(ymax > ymin)) { ymax = ymin + 1; }
  const sx = (x) => pad + ((x - xmin) / (xmax - xmin || 1)) * (w - 2 * pad);
  const sy = (y) => {
    const v = opts.logy ? Math.log10(Math.max(y, 1e-22)) : y;
    return h - pad - ((v - ymin) / (ymax - ymin)) * (h - 2 * pad);
  };
  ctx.strokeStyle = "#eee";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  if (opts.title) {
    ctx.fillStyle = "#555";
    ctx.font = "20px system-ui";
    ctx.fillText(opts.title, pad, pad - 8);
  }
  if (opts.vline !== undefined) {
    ctx.strokeStyle = "#ccc";
    ctx.setLineDash([6, 6]);
    ctx.beginPath();
    ctx.moveTo(sx(opts.vline), pad);
    ctx.lineTo(sx(opts.vline), h - pad);
    ctx.stroke();
    ctx.setLineDash([]);
  }
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.lineWidth = s.width || 2;
    if (s.dots) {
      for (let i = 0; i < s.y.length; i++) {
        ctx.beginPath();
        ctx.arc(sx(s.x ? s.x[i] : i), sy(s.y[i]), 5, 0, 2 * Math.PI);
        ctx.fill();
      }
    } else {
      ctx.beginPath();
      for (let i = 0; i < s.y.length; i++) {
        const px = sx(s.x ? s.x[i] : i), py = sy(s.y[i]);
        if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
      }
      ctx.stroke();
    }
  }
}

const el = (id) => document.getElementById(id);

function drawAlias() {
  const n = +el("alias-n").value;
  const r = +el("alias-r").value;
  el("alias-n-out").value = n;
  const d = JSON.parse(alias_demo(n, r, 48));
  el("alias-out").value = `wavenumber ${d.alias_freq}${d.folded ? " (folded)" : ""}`;
  plot(el("alias-wave"), [
    { x: d.fine_x, y: d.fine_y, color: css("--accent"), width: 1.5 },
    { x: d.fine_x, y: d.alias_y, color: css("--alias"), width: 2.5 },
    { x: d.sample_x, y: d.sample_y, color: "#222", dots: true },
  ], { title: `sin(2π·${n}x) sampled at ${r} points` });
  plot(el("alias-curve"), [
    { y: d.alias_curve, color: css("--accent") },
    { x: [n], y: [d.alias_freq], color: css("--alias"), dots: true },
  ], { title: `fold map: observed frequency vs true (rate ${r})`, vline: r / 2 });
  // spectrum of the sampled tone: a single spike at the alias
  const bins = new Array(Math.floor(r / 2) + 1).fill(0);
  if (n % r !== 0 && 2 * (n % r) !== r) bins[d.alias_freq] = 0.5;
  plot(el("alias-spec"), [{ y: bins, color: css("--alias") }],
    { title: "energy spectrum of the sampled signal" });
}

function drawFilterResample() {
  const seed = +el("fr-seed").value;
  const limit = +el("fr-limit").value;
  const res = +el("fr-res").value;
  el("fr-limit-out").value = limit;
  const d = JSON.parse(filter_resample_demo(seed, 128, limit, res));
  plot(el("fr-signal"), [
    { x: d.original.x, y: d.original.y, color: "#bbb", width: 1 },
    { x: d.filtered.x, y: d.filtered.y, color: css("--accent") },
    { x: d.resampled.x, y: d.resampled.y, color: css("--alias"), dots: res <= 32 },
  ], { title: `limit ${limit}, resampled 128 → ${res}` });
  plot(el("fr-spec"), [
    { y: d.original.spectrum, color: "#bbb", width: 1 },
    { y: d.filtered.spectrum, color: css("--accent") },
    { y: d.resampled.spectrum, color: css("--alias") },
  ], { title: "energy spectra (log)", logy: true, vline: limit });
}

function drawBurgers() {
  const seed = +el("bg-seed").value;
  const t = +el("bg-t").value;
  el("bg-t-out").value = t.toFixed(2);
  const d = JSON.parse(burgers_demo(seed, t, 256));
  plot(el("bg-field"), [
    { x: d.x, y: d.u0, color: "#bbb" },
    { x: d.x, y: d.u_t, color: css("--alias") },
  ], { title: `u(x,0) and u(x,${t.toFixed(2)})` });
  plot(el("bg-spec"), [
    { y: d.spectrum0, color: "#bbb" },
    { y: d.spectrum_t, color: css("--alias") },
  ], { title: "energy spectra (log)", logy: true });
}

await init();
for (const id of ["alias-n", "alias-r"]) el(id).addEventListener("input", drawAlias);
for (const id of ["fr-seed", "fr-limit", "fr-res"]) el(id).addEventListener("input", drawFilterResample);
for (const id of ["bg-seed", "bg-t"]) el(id).addEventListener("input", drawBurgers);
drawAlias();
drawFilterResample();
drawBurgers();
