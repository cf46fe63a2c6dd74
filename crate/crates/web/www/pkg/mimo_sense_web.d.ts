/* tslint:disable */
/* eslint-disable */

/**
 * Activity identifiers accepted by the other functions.
 */
export function activities(): string[];

/**
 * `|h(t, f, m)|` of subcarrier `f`, laid out `t + snapshots · m` (time along x, antenna along y).
 */
export function amplitude_map(activity: string, los: boolean, seed: bigint, snapshots: number, subcarriers: number, antennas: number, f: number): Float64Array;

/**
 * Antenna-by-antenna correlation amplitude at subcarrier `f`, row-major `antennas × antennas`.
 */
export function antenna_correlation(activity: string, los: boolean, seed: bigint, snapshots: number, subcarriers: number, antennas: number, f: number): Float64Array;

/**
 * Descending CP weights of the normalized amplitude tensor `|g| / ||g||`.
 */
export function cp_spectrum(activity: string, los: boolean, seed: bigint, snapshots: number, subcarriers: number, antennas: number, r_max: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly activities: () => [number, number];
    readonly amplitude_map: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly antenna_correlation: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly cp_spectrum: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
