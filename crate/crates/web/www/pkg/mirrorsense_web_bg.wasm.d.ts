/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_aim: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_auto_tilt: (a: number) => [number, number];
export const demo_bev_cols: (a: number) => number;
export const demo_bev_geometry: (a: number) => [number, number];
export const demo_bev_heights: (a: number) => [number, number];
export const demo_bev_rows: (a: number) => number;
export const demo_depth: (a: number, b: number) => [number, number, number, number];
export const demo_height: (a: number) => number;
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_occlusion_labels: (a: number) => [number, number];
export const demo_summary: (a: number) => [number, number];
export const demo_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
