/* tslint:disable */
/* eslint-disable */

/**
 * A generated scene with its direct-view bird's-eye grid.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Tilt in degrees that aims at world point (x, y, z) through the mirror, with the
     * unreachable lateral offset: `[theta_deg, y_residual]`.
     */
    aim(x: number, y: number, z: number): Float64Array;
    /**
     * Tilt aimed at the largest occlusion, if one was found and is reachable.
     */
    auto_tilt(): number | undefined;
    /**
     * World X, Y of cell (0, 0)'s lower-left corner and the cell size.
     */
    bev_geometry(): Float64Array;
    /**
     * Per-cell max height of the direct view, NaN where empty.
     */
    bev_heights(): Float32Array;
    /**
     * Range image in meters at `tilt_deg`, row-major; 0 where nothing returned.
     */
    depth(tilt_deg: number): Float32Array;
    constructor(seed: number, hard: boolean);
    /**
     * Occlusion label per cell: 0 for none, k for the k-th largest region.
     */
    occlusion_labels(): Uint8Array;
    summary(): string;
    readonly bev_cols: number;
    readonly bev_rows: number;
    readonly height: number;
    readonly width: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_aim: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_auto_tilt: (a: number) => [number, number];
    readonly demo_bev_cols: (a: number) => number;
    readonly demo_bev_geometry: (a: number) => [number, number];
    readonly demo_bev_heights: (a: number) => [number, number];
    readonly demo_bev_rows: (a: number) => number;
    readonly demo_depth: (a: number, b: number) => [number, number, number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_occlusion_labels: (a: number) => [number, number];
    readonly demo_summary: (a: number) => [number, number];
    readonly demo_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
