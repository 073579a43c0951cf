"""Shipped gradient-direction tables.

Antipodally symmetric point sets produced by electrostatic repulsion on the
sphere, canonicalized to the upper hemisphere and frozen here so phantoms,
tests and benchmarks run identically everywhere. Each table is checked once,
on first use, for full column rank of the SH design matrix at its supported
order.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .shcore import eval_basis

# n_directions -> highest SH order the set can determine (R <= n with margin)
SUPPORTED_ORDERS = {30: 4, 60: 8, 90: 8}

_TABLE_30 = np.array([
    [ 0.912936295317, -0.405288788586,  0.047836372558],
    [-0.630268492477, -0.774786451538,  0.049674761234],
    [ 0.894634884062,  0.433940658417,  0.106413952059],
    [-0.612685146294,  0.781748101408,  0.116132757892],
    [-0.179289263328,  0.969785783519,  0.165441512749],
    [-0.155468808356, -0.963595319879,  0.217516687029],
    [ 0.289366104743,  0.929816235766,  0.227396185395],
    [ 0.971525518939,  0.016668172432,  0.236347917438],
    [-0.971187764679, -0.011410651630,  0.238042270969],
    [ 0.289518653037, -0.904831231629,  0.312184868007],
    [ 0.662718961802, -0.666541946806,  0.341358185511],
    [-0.814858641428, -0.436361319810,  0.381568071336],
    [-0.811056896031,  0.427897896988,  0.398861004805],
    [ 0.610130456733,  0.655865102226,  0.444501736159],
    [-0.465714641334, -0.740740333767,  0.484162814328],
    [-0.387064329318,  0.752328971205,  0.533087538830],
    [ 0.787659107050, -0.270970093410,  0.553324804756],
    [ 0.762897219849,  0.234733940510,  0.602401700794],
    [ 0.100780886405,  0.790482523032,  0.604136237711],
    [-0.751805098485, -0.054631278700,  0.657118343435],
    [-0.025438925588, -0.750282008754,  0.660628313354],
    [ 0.404394593083, -0.558424831991,  0.724311203905],
    [-0.549779697809,  0.364050102499,  0.751804367337],
    [-0.446341343011, -0.419982337479,  0.790186206995],
    [ 0.388853939533,  0.443777294031,  0.807374960605],
    [ 0.498614765265, -0.092906206055,  0.861830466354],
    [-0.114665966696,  0.483220126675,  0.867957386775],
    [ 0.024113168409, -0.363182938139,  0.931405770088],
    [-0.334040768033, -0.002129387831,  0.942556221665],
    [ 0.118579839047,  0.098270260645,  0.988069723068],
])

_TABLE_60 = np.array([
    [ 0.992886360811,  0.116677402113,  0.023728850631],
    [-0.970951197960,  0.232652181883,  0.055917201699],
    [-0.834704049616,  0.547170484541,  0.062238335467],
    [ 0.356343388817, -0.931670284647,  0.070780434820],
    [-0.044522948563,  0.996073520031,  0.076519603659],
    [ 0.873238501930,  0.478077368294,  0.094321517551],
    [-0.190198909125, -0.972206199536,  0.136526482967],
    [-0.574392075537,  0.805026239872,  0.148345868423],
    [ 0.644953997546,  0.749287827154,  0.150339925263],
    [-0.493446656581, -0.856001528885,  0.154180996417],
    [ 0.341316980833,  0.926524537177,  0.158287714632],
    [-0.746405942775, -0.645772007061,  0.160800135216],
    [ 0.649927914837, -0.740181385346,  0.172410041190],
    [-0.919342976528, -0.329245946636,  0.215419586232],
    [ 0.857727712785, -0.454305333207,  0.240644623751],
    [ 0.959508606686, -0.123097199051,  0.253358073252],
    [-0.279144820861,  0.917961485114,  0.281824202000],
    [ 0.102505512178, -0.949538065729,  0.296428881362],
    [-0.948359249248, -0.012717863729,  0.316943197291],
    [ 0.909586879687,  0.260986262693,  0.323323180406],
    [-0.720508469993,  0.594580222988,  0.356849972817],
    [-0.878541423365,  0.303911358768,  0.368514387025],
    [ 0.098634684645,  0.921128600880,  0.376554510830],
    [ 0.393932888704, -0.828750198166,  0.397479544426],
    [ 0.724663890797,  0.550894528557,  0.413977612656],
    [ 0.455333655140,  0.776863512458,  0.434918780358],
    [-0.218944863808, -0.868021552569,  0.445647541099],
    [-0.747813386073, -0.488644487253,  0.449445997522],
    [-0.518132305155, -0.720555002344,  0.460802997984],
    [ 0.636837666795, -0.601716841279,  0.482052516923],
    [-0.461762770150,  0.731560652823,  0.501591622084],
    [ 0.795271340596, -0.300492536876,  0.526543189215],
    [ 0.848586477883,  0.023797300326,  0.528521218165],
    [-0.800640729564, -0.195960182094,  0.566192572538],
    [-0.144348161536,  0.807049342378,  0.572568744544],
    [ 0.064891606157, -0.795393202236,  0.602609934607],
    [-0.652414151175,  0.423056628026,  0.628791590935],
    [-0.764977718027,  0.112254029170,  0.634198804680],
    [ 0.707984242567,  0.301716255549,  0.638533956353],
    [ 0.204220577176,  0.734781941326,  0.646830313574],
    [ 0.347544665309, -0.649601866117,  0.676187933309],
    [ 0.482518315559,  0.543432860056,  0.686918337040],
    [-0.284678338789, -0.654302793456,  0.700604094978],
    [-0.551141628373, -0.438310783597,  0.710018705709],
    [ 0.557431745070, -0.371559644454,  0.742437391435],
    [-0.371658359145,  0.534859454059,  0.758811853150],
    [ 0.638318784108, -0.046359238758,  0.768374876500],
    [-0.054762984148,  0.592816701977,  0.803473318428],
    [-0.561657088900, -0.120652674087,  0.818525654286],
    [-0.008902021450, -0.554535670754,  0.832112338495],
    [-0.491617903614,  0.210425460433,  0.845004711495],
    [ 0.456672516795,  0.227482673186,  0.860059210638],
    [ 0.209497078761,  0.432204345021,  0.877103402191],
    [ 0.263409619400, -0.397382389766,  0.879035044075],
    [-0.286230692887, -0.348353787395,  0.892592644635],
    [ 0.350362917393, -0.086252859770,  0.932634049506],
    [-0.166284992645,  0.307214265017,  0.936999838095],
    [-0.260369786895, -0.012564462455,  0.965427215463],
    [ 0.009490826043, -0.204206945884,  0.978881733139],
    [ 0.101969936185,  0.127919492898,  0.986528628805],
])

_TABLE_90 = np.array([
    [ 0.316704714197, -0.948523463366,  0.001167668526],
    [ 0.978259076400, -0.207378575812,  0.001818168358],
    [ 0.163948669282,  0.985501517732,  0.043675993274],
    [-0.556317403173,  0.829764730509,  0.044737444382],
    [-0.992322105012, -0.103418773831,  0.067833598784],
    [ 0.874917903452, -0.477931328825,  0.078104463039],
    [-0.919445803149, -0.379336771309,  0.103552059392],
    [-0.754158709331,  0.647874320043,  0.107254401166],
    [ 0.650865557913,  0.750095244925,  0.117179985760],
    [ 0.047881069368, -0.991600681174,  0.120147793538],
    [-0.359756916617, -0.925065468550,  0.121773723944],
    [-0.778485115451, -0.615384274467,  0.123543999287],
    [ 0.829374456407,  0.541497442137,  0.137544651723],
    [-0.584222170223, -0.799180315340,  0.141404665389],
    [ 0.426879840546,  0.893071386425,  0.142116503211],
    [ 0.945249675021,  0.288967414401,  0.151660427555],
    [-0.086101791527,  0.982487355301,  0.165242482945],
    [ 0.712185023571, -0.681156688426,  0.169758823080],
    [ 0.984037718042, -0.001244544166,  0.177955670270],
    [-0.899915151164,  0.394960766222,  0.184820761415],
    [ 0.503578822913, -0.832948490916,  0.229358192779],
    [-0.963987194058,  0.098399048783,  0.247075528717],
    [ 0.918808690605, -0.293614856817,  0.263781928730],
    [-0.337494900964,  0.903477861875,  0.264244101024],
    [ 0.260691147729, -0.928277775151,  0.265217830577],
    [-0.155480546405, -0.943371003262,  0.293047692185],
    [ 0.183322371640,  0.934315153694,  0.305692822347],
    [-0.565898796717,  0.763791147640,  0.310453917130],
    [-0.926639620043, -0.199153502967,  0.318868149590],
    [-0.810675881574, -0.466235875537,  0.354159178050],
    [-0.749655726435,  0.555804777288,  0.359301184756],
    [ 0.649675517839,  0.665568621686,  0.367341981466],
    [ 0.777408993746, -0.507378073830,  0.371756300067],
    [-0.628931803299, -0.676640820451,  0.382886389022],
    [-0.401704555162, -0.830916859863,  0.384981327285],
    [ 0.811099539748,  0.438937875787,  0.386589029616],
    [ 0.902125056718,  0.177565316030,  0.393244123396],
    [ 0.429276932978,  0.812631646839,  0.394146066032],
    [-0.071218450968,  0.903379043489,  0.422887971013],
    [ 0.900884108545, -0.086508360988,  0.425351767893],
    [-0.859745669145,  0.278500899936,  0.428105866722],
    [ 0.063413732295, -0.895385019576,  0.440754313961],
    [ 0.580196640293, -0.679367114022,  0.449257368306],
    [-0.870570113219,  0.002500575579,  0.492038032161],
    [ 0.339560335480, -0.801310525842,  0.492544637311],
    [-0.314165181587,  0.800501882894,  0.510389041969],
    [ 0.782046033047, -0.299383034800,  0.546602049638],
    [-0.785141006205, -0.284964191511,  0.549862719169],
    [ 0.180455963416,  0.815481339794,  0.549932568334],
    [-0.527567132297,  0.645796830386,  0.551923341401],
    [-0.172038490029, -0.812901691983,  0.556411356031],
    [-0.689230580508,  0.426795212500,  0.585497270257],
    [ 0.623606983416,  0.513035580626,  0.589837963552],
    [-0.622880214874, -0.512077448810,  0.591436323148],
    [ 0.756820968725,  0.251878639559,  0.603141088164],
    [-0.407714256728, -0.677951501013,  0.611678712344],
    [ 0.411176532529,  0.669224456029,  0.618928498739],
    [ 0.602577322625, -0.482786397316,  0.635466651229],
    [ 0.766869868813, -0.017155070600,  0.641573306692],
    [-0.071697152937,  0.750042959784,  0.657491503169],
    [ 0.109602761190, -0.742912372204,  0.660354784919],
    [-0.720740317734,  0.179890123512,  0.669457196433],
    [ 0.374689938997, -0.622906854145,  0.686727384538],
    [-0.708008207269, -0.081989634850,  0.701428598089],
    [-0.292753297681,  0.615442167102,  0.731796724268],
    [-0.485644741083,  0.438795492671,  0.756047419856],
    [-0.126491691578, -0.638450070894,  0.759197839128],
    [ 0.609323378058, -0.227703580458,  0.759523600949],
    [ 0.151236404725,  0.630393382136,  0.761401164726],
    [-0.562184759283, -0.322325152422,  0.761613282806],
    [ 0.560188551751,  0.313061496594,  0.766929778949],
    [-0.353979471119, -0.492943686223,  0.794798752037],
    [ 0.361989007575,  0.472919437333,  0.803312619214],
    [ 0.577766529992,  0.050259347125,  0.814653199127],
    [ 0.396214581738, -0.389001916168,  0.831679935093],
    [ 0.147647296680, -0.533117327854,  0.833058335608],
    [-0.510496667226,  0.189277138887,  0.838789197263],
    [-0.073723294803,  0.509413428260,  0.857358055256],
    [-0.499314891703, -0.073126406731,  0.863329118913],
    [-0.270910237545,  0.337800440082,  0.901386990074],
    [-0.085891041023, -0.408047825847,  0.908911272289],
    [ 0.388384449254, -0.117151793423,  0.914020227826],
    [ 0.352801500238,  0.187590267989,  0.916701146932],
    [-0.306706348932, -0.250183560802,  0.918335124793],
    [ 0.142464542288,  0.360344842028,  0.921876048617],
    [ 0.161732334931, -0.274210405942,  0.947972206930],
    [-0.277886579785,  0.053894216577,  0.959100861325],
    [-0.048583244024,  0.192721489887,  0.980050047567],
    [ 0.158656422226,  0.020714491780,  0.987116532896],
    [-0.070294359347, -0.124082121522,  0.989778929945],
])

_TABLES = {30: _TABLE_30, 60: _TABLE_60, 90: _TABLE_90}


@lru_cache(maxsize=None)
def _self_check(n: int) -> bool:
    table = _TABLES[n]
    order = SUPPORTED_ORDERS[n]
    design = eval_basis(table, order)
    smallest = np.linalg.svd(design, compute_uv=False)[-1]
    if not np.isfinite(smallest) or smallest <= 1e-6:
        raise RuntimeError(
            f"direction table n={n} fails rank check at order {order} "
            f"(smallest singular value {smallest:.3e})"
        )
    return True


def unit_sphere_directions(n: int) -> np.ndarray:
    """Return a copy of the shipped n-direction table (n in 30, 60, 90)."""
    if n not in _TABLES:
        raise ValueError(f"no shipped direction table for n={n}; available: {sorted(_TABLES)}")
    _self_check(n)
    table = _TABLES[n] / np.linalg.norm(_TABLES[n], axis=1, keepdims=True)
    return table.copy()
