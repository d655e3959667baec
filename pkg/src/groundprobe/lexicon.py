"""Default element names for synthetic screens.

Single tokens only, and none of them collide with a word used in the command
templates, so a phrase mentions an element exactly when it names it.
"""

DEFAULT_LEXICON = tuple(
    """
    about account activity add address advanced airplane alarm album alerts
    apply apps archive audio back backup balance battery bluetooth bookmark
    bookmarks brightness browse calendar call camera cancel cart categories
    chat checkout clear clock close comments compose confirm connect contacts
    continue copy create crop customize cut dashboard data date delete details
    device directions disconnect discover dismiss display done download drafts
    edit email emoji enable events expand explore export favorites feedback
    files filter find finish flash folder follow followers following forward
    friends gallery games general gps groups help history home inbox info
    install invite join keyboard language later library like links list live
    location lock login logout mail manage map maps menu messages microphone
    more mute music mute network new news next notes notifications offline
    open options orders password paste pause payment people phone photos pin
    play playlist post preferences preview print privacy profile promotions
    purchase queue radio rate recent record redo refresh register reject
    reload remind remove rename reply report reset restore resume retry
    review rewind ringtone rotate route save scan schedule search security
    send sent share shop shuffle signup skip sleep snooze sort sound spam
    start starred stop storage store submit subscribe support sync tags
    terms theme timer today tools track translate trash trending undo
    uninstall unlock update upgrade upload usage user video videos view
    volume wallet wallpaper weather wifi zoom accept agree allow alphabetical
    bank block brush budget cards cellular charts coupons deals deposit
    """.split()
)
DEFAULT_LEXICON = tuple(dict.fromkeys(DEFAULT_LEXICON))
